"""Closed-form periodic peakons and their stochastic ODEs.

Positions live on the circle ``[0, L)``.  Throughout, ``mod(x, L)`` is
reduced into ``[0, L)`` and ``sign(0) = 0``: the derivative of a peakon at
its own summit is taken as zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy.integrate import quad

from .fem import Mesh1DPeriodic, NodalField
from .noise import BrownianPath, NoiseBasis

__all__ = [
    "GreensKernel",
    "PeakonState",
    "greens_kernel",
    "peakon_velocity",
    "peakon_slope",
    "peakon_nodal_ic",
    "strat_rhs",
    "ito_rhs",
    "milstein_step",
    "heun_step",
    "integrate_milstein",
    "integrate_heun",
    "verify_convolution_identity",
    "periodic_difference",
]


@dataclass(frozen=True)
class GreensKernel:
    L: float
    alpha: float

    def __post_init__(self):
        if self.L <= 0 or self.alpha <= 0:
            raise ValueError("L and alpha must be positive")

    @property
    def decay(self) -> float:
        """``exp(-L / alpha)``."""
        return np.exp(-self.L / self.alpha)

    def __call__(self, x):
        m = np.mod(x, self.L) / self.alpha
        E = self.decay
        return (np.exp(-m) + E * np.exp(m)) / (2.0 * (1.0 - E))

    def derivative(self, x):
        """``K'(x)`` with the value 0 at ``x = 0 (mod L)``."""
        m = np.mod(x, self.L)
        E = self.decay
        r = m / self.alpha
        d = (-np.exp(-r) + E * np.exp(r)) / (2.0 * self.alpha * (1.0 - E))
        return np.where(m == 0.0, 0.0, d)


def greens_kernel(kernel: GreensKernel, x):
    return kernel(x)


@dataclass(frozen=True, eq=False)
class PeakonState:
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=float)).copy()
        q = np.atleast_1d(np.asarray(self.q, dtype=float)).copy()
        if p.shape != q.shape or p.ndim != 1 or p.size == 0:
            raise ValueError("p and q must be non-empty 1D arrays of equal length")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("peakon state must be finite")
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    def __len__(self):
        return self.p.size

    def wrapped(self, L: float) -> "PeakonState":
        return PeakonState(self.p, np.mod(self.q, L))


def periodic_difference(a, b, L: float):
    """``a - b`` mapped into ``(-L/2, L/2]``."""
    d = np.mod(np.asarray(a, dtype=float) - b, L)
    return np.where(d > L / 2, d - L, d)


def peakon_velocity(state: PeakonState, kernel: GreensKernel, x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for pk, qk in zip(state.p, state.q):
        out = out + pk * kernel(x - qk)
    return out


def peakon_slope(state: PeakonState, kernel: GreensKernel, x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for pk, qk in zip(state.p, state.q):
        out = out + pk * kernel.derivative(x - qk)
    return out


def peakon_nodal_ic(state: PeakonState, kernel: GreensKernel, mesh: Mesh1DPeriodic) -> NodalField:
    return NodalField(mesh, peakon_velocity(state, kernel, mesh.nodes))


# --------------------------------------------------------------------------
# peakon SDEs


def strat_rhs(state: PeakonState, kernel: GreensKernel, basis: NoiseBasis):
    """Stratonovich drift and diffusion of the periodic N-peakon system.

    Returns ``(drift_p, drift_q, diff_p, diff_q)``; the diffusion arrays have
    shape ``(n_components, n_peakons)``.

    The momentum drift is ``-p_k u_x(q_k)``, where each peakon's own kink
    contributes nothing.
    """
    p, q = state.p, state.q
    sep = q[:, None] - q[None, :]  # q_k - q_l
    drift_q = kernel(sep) @ p
    drift_p = -p * (kernel.derivative(sep) @ p)
    xi = basis.evaluate(q, 0)
    xi_x = basis.evaluate(q, 1)
    return drift_p, drift_q, -p[None, :] * xi_x, xi


def _require_single(state: PeakonState):
    if len(state) != 1:
        raise NotImplementedError("the Ito peakon system is only available for a single peakon")


def ito_rhs(state: PeakonState, kernel: GreensKernel, basis: NoiseBasis):
    """Ito drift and diffusion for a single peakon.

    Returns ``(drift_p, drift_q, diff_p, diff_q)`` with per-component
    diffusion arrays of shape ``(n_components,)``.
    """
    _require_single(state)
    p, q = state.p[0], state.q[0]
    E = kernel.decay
    xi, xi_x, xi_xx = (basis.evaluate(q, k) for k in (0, 1, 2))
    drift_p = 0.5 * p * np.sum(xi_x**2 - xi * xi_xx)
    drift_q = 0.5 * (p * (1 + E) / (1 - E) + np.sum(xi * xi_x))
    return drift_p, drift_q, -p * xi_x, xi


def milstein_step(state: PeakonState, basis: NoiseBasis, kernel: GreensKernel, dt: float, dW) -> PeakonState:
    """One Milstein step of the single-peakon Ito system.

    Cross terms between different components use ``I_(j1 j2) ~ dW_j1 dW_j2 / 2``,
    which is exact when the noise fields commute (e.g. a single component).
    """
    _require_single(state)
    dW = np.atleast_1d(np.asarray(dW, dtype=float))
    if dW.shape != (len(basis),):
        raise ValueError(f"expected {len(basis)} increments, got {dW.shape}")
    drift_p, drift_q, bp, bq = ito_rhs(state, kernel, basis)
    p, q = state.p[0], state.q[0]
    newp = p + drift_p * dt + bp @ dW
    newq = q + drift_q * dt + bq @ dW
    if len(basis):
        xi, xi_x, xi_xx = (basis.evaluate(q, k) for k in (0, 1, 2))
        # L^{a} b^{b}: derivative of diffusion b along diffusion a
        Lp = p * (xi_x[:, None] * xi_x[None, :] - xi[:, None] * xi_xx[None, :])
        Lq = xi[:, None] * xi_x[None, :]
        I2 = 0.5 * np.outer(dW, dW)
        I2[np.diag_indices_from(I2)] -= 0.5 * dt
        newp += np.sum(Lp * I2)
        newq += np.sum(Lq * I2)
    return PeakonState([newp], [np.mod(newq, kernel.L)])


def heun_step(state: PeakonState, basis: NoiseBasis, kernel: GreensKernel, dt: float, dW) -> PeakonState:
    """Stochastic Heun (trapezoidal predictor-corrector) step; converges to
    the Stratonovich solution."""
    dW = np.atleast_1d(np.asarray(dW, dtype=float))
    if dW.shape != (len(basis),):
        raise ValueError(f"expected {len(basis)} increments, got {dW.shape}")

    def incr(s):
        fp, fq, gp, gq = strat_rhs(s, kernel, basis)
        return fp * dt + dW @ gp, fq * dt + dW @ gq

    dp1, dq1 = incr(state)
    pred = PeakonState(state.p + dp1, state.q + dq1)
    dp2, dq2 = incr(pred)
    return PeakonState(state.p + 0.5 * (dp1 + dp2), np.mod(state.q + 0.5 * (dq1 + dq2), kernel.L))


def _integrate(stepper, state, basis, kernel, path: BrownianPath, n_steps: Optional[int], stride: int):
    n = path.n_steps if n_steps is None else int(n_steps)
    if n > path.n_steps:
        raise ValueError(f"path has {path.n_steps} steps, {n} requested")
    if len(basis) != path.n_components:
        raise ValueError("noise basis and Brownian path disagree on the number of components")
    times, ps, qs = [0.0], [state.p.copy()], [state.q.copy()]
    for i in range(n):
        state = stepper(state, basis, kernel, path.dt, path.increments[i])
        if (i + 1) % stride == 0 or i + 1 == n:
            times.append((i + 1) * path.dt)
            ps.append(state.p.copy())
            qs.append(state.q.copy())
    return state, np.array(times), np.array(ps), np.array(qs)


def integrate_milstein(state, basis, kernel, path: BrownianPath, n_steps=None, stride: int = 1):
    """Milstein trajectory; returns ``(final_state, t, p, q)`` sampled every ``stride`` steps."""
    return _integrate(milstein_step, state, basis, kernel, path, n_steps, stride)


def integrate_heun(state, basis, kernel, path: BrownianPath, n_steps=None, stride: int = 1):
    return _integrate(heun_step, state, basis, kernel, path, n_steps, stride)


# --------------------------------------------------------------------------
# convolution identity


def verify_convolution_identity(
    state: PeakonState,
    component,
    kernel: GreensKernel,
    sample_points: Iterable[float],
    tol: float = 1e-10,
) -> float:
    """Max residual of ``K * (2 u Xi_y + alpha^2 u_y Xi_yy)`` against its closed form.

    The convolution is computed by adaptive quadrature split at the peak
    and at the evaluation point, where the integrand has kinks.
    """
    if len(state) != 1:
        raise ValueError("identity is checked one peakon at a time")
    L, a = kernel.L, kernel.alpha
    q = float(np.mod(state.q[0], L))
    xs = np.mod(np.asarray(list(sample_points), dtype=float), L)
    if np.any(np.isclose(xs, q, rtol=0, atol=1e-12)):
        raise ValueError("the identity only holds away from the peak")

    def u(y):
        return peakon_velocity(state, kernel, y)

    def uy(y):
        return peakon_slope(state, kernel, y)

    def integrand(y, x):
        src = 2.0 * u(y) * component(y, 1) + a * a * uy(y) * component(y, 2)
        return kernel(x - y) / a * src

    worst = 0.0
    for x in xs:
        edges = [0.0] + sorted({q, float(x)}) + [L]
        conv = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            if hi > lo:
                conv += quad(integrand, lo, hi, args=(x,), epsabs=tol, epsrel=1e-13, limit=200)[0]
        closed = u(x) * component(q, 1) + uy(x) * component(q, 0) - uy(x) * component(x, 0)
        worst = max(worst, abs(conv - float(closed)))
    return worst

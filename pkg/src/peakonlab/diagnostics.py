"""Peakon-formation and wave-breaking diagnostics.

``nu`` measures the jump in the cellwise slope across the peak, divided by
the distance between the cells holding the steepest rise and the steepest
fall.  It converges for smooth profiles and grows like ``1/dx`` once a
peakon is present.  Regressing ``nu`` and ``min u_x`` against ``dx`` across
resolutions gives the two scalar detectors: ``Pi`` (window mean of
``d nu / d dx``; strongly negative means a peakon) and ``omega`` (max over
time of ``d min u_x / d dx``; strongly positive means wave breaking).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .fem import HelmholtzSystem, NodalField, integrate, stiffness_matrix

__all__ = [
    "DegenerateDiagnostic",
    "SlopeExtrema",
    "DiagnosticSeries",
    "FormationSummary",
    "slope_extrema",
    "nu",
    "nu_from_extrema",
    "fit_gradient",
    "regression_slopes",
    "pi_diagnostic",
    "omega_diagnostic",
    "summarize",
    "momentum_density",
    "h1_energy",
    "steepening_check",
    "series_from_trajectory",
    "inflection_separation",
]

log = logging.getLogger(__name__)


class DegenerateDiagnostic(ValueError):
    """Raised when the slope extrema sit in the same cell."""


@dataclass(frozen=True)
class SlopeExtrema:
    max_slope: float
    min_slope: float
    x_max: float
    x_min: float


def slope_extrema(u: NodalField) -> SlopeExtrema:
    s = u.slopes()
    cmax, cmin = int(np.argmax(s)), int(np.argmin(s))
    centres = u.mesh.cell_centres
    return SlopeExtrema(float(s[cmax]), float(s[cmin]), float(centres[cmax]), float(centres[cmin]))


def _signed_gap(x_min, x_max, L):
    """``x_min - x_max`` mapped into ``(-L/2, L/2]``."""
    d = np.mod(np.asarray(x_min, dtype=float) - x_max, L)
    return np.where(d > L / 2, d - L, d)


def nu_from_extrema(max_slope, min_slope, x_max, x_min, L):
    """Vectorised ``nu``; coincident extrema give NaN."""
    gap = _signed_gap(x_min, x_max, L)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (np.asarray(max_slope) - min_slope) / gap
    return np.where(gap == 0, np.nan, out)


def nu(u: NodalField) -> float:
    ext = slope_extrema(u)
    gap = float(_signed_gap(ext.x_min, ext.x_max, u.mesh.length))
    if gap == 0:
        raise DegenerateDiagnostic("maximum and minimum slope lie in the same cell")
    return (ext.max_slope - ext.min_slope) / gap


def inflection_separation(x_left, x_right, L):
    """Periodic distance between the two inflection markers."""
    return np.abs(_signed_gap(x_right, x_left, L))


def fit_gradient(xs, ys) -> float:
    """Ordinary least-squares slope of ``ys`` against ``xs``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 2:
        raise ValueError("need at least two (x, y) pairs")
    xc = xs - xs.mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise ValueError("x values must not all coincide")
    return float(xc @ (ys - ys.mean()) / sxx)


def regression_slopes(dxs, values) -> np.ndarray:
    """OLS slope against ``dxs`` for every column of ``values`` (resolutions x times)."""
    dxs = np.asarray(dxs, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape[0] != dxs.size or dxs.size < 2:
        raise ValueError("need one row of values per resolution and at least two resolutions")
    xc = dxs - dxs.mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise ValueError("resolutions must have distinct dx")
    return xc @ (values - values.mean(axis=0)) / sxx


@dataclass
class DiagnosticSeries:
    dx: float
    times: np.ndarray
    nu: np.ndarray
    min_slope: np.ndarray
    inflection_positions: np.ndarray  # (n_times, 2): (x of max slope, x of min slope)
    H1: np.ndarray
    total_u: np.ndarray
    momentum_min: np.ndarray

    def __post_init__(self):
        n = len(self.times)
        for name in ("nu", "min_slope", "inflection_positions", "H1", "total_u", "momentum_min"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"series field {name!r} does not match the time grid")


def series_from_trajectory(traj) -> DiagnosticSeries:
    rec = traj.records
    mesh = traj.mesh
    centres = mesh.cell_centres
    x_max = centres[rec["cell_max"]]
    x_min = centres[rec["cell_min"]]
    nus = nu_from_extrema(rec["max_ux"], rec["min_ux"], x_max, x_min, mesh.length)
    n_bad = int(np.isnan(nus).sum())
    if n_bad:
        log.warning("nu undefined at %d of %d times (coincident extrema) for dx=%g", n_bad, nus.size, mesh.dx)
    return DiagnosticSeries(
        dx=mesh.dx,
        times=np.asarray(traj.times, dtype=float),
        nu=nus,
        min_slope=np.asarray(rec["min_ux"], dtype=float),
        inflection_positions=np.column_stack([x_max, x_min]),
        H1=np.asarray(rec["H1"], dtype=float),
        total_u=np.asarray(rec["int_u"], dtype=float),
        momentum_min=np.asarray(rec["min_m"], dtype=float),
    )


@dataclass
class FormationSummary:
    Pi: float
    omega: float
    times: np.ndarray
    dnu_ddx: np.ndarray
    dminux_ddx: np.ndarray
    window: Tuple[float, float] = (15.0, 20.0)


def _stack(series: Sequence[DiagnosticSeries], attr: str):
    if len(series) < 2:
        raise ValueError("need at least two resolutions")
    t0 = series[0].times
    for s in series[1:]:
        if s.times.shape != t0.shape or not np.allclose(s.times, t0, rtol=0, atol=1e-9):
            raise ValueError("diagnostic series have mismatched time grids")
    return t0, np.array([s.dx for s in series]), np.vstack([getattr(s, attr) for s in series])


def pi_diagnostic(series: Sequence[DiagnosticSeries], window=(15.0, 20.0)) -> float:
    times, dxs, vals = _stack(series, "nu")
    sel = (times >= window[0] - 1e-9) & (times <= window[1] + 1e-9)
    if not sel.any():
        raise ValueError(f"no samples inside the averaging window {window}")
    return float(np.mean(regression_slopes(dxs, vals[:, sel])))


def omega_diagnostic(series: Sequence[DiagnosticSeries]) -> float:
    _, dxs, vals = _stack(series, "min_slope")
    return float(np.max(regression_slopes(dxs, vals)))


def summarize(series: Sequence[DiagnosticSeries], window=(15.0, 20.0)) -> FormationSummary:
    times, dxs, nus = _stack(series, "nu")
    _, _, mins = _stack(series, "min_slope")
    dnu = regression_slopes(dxs, nus)
    dmin = regression_slopes(dxs, mins)
    sel = (times >= window[0] - 1e-9) & (times <= window[1] + 1e-9)
    if not sel.any():
        raise ValueError(f"no samples inside the averaging window {window}")
    return FormationSummary(float(np.mean(dnu[sel])), float(np.max(dmin)), times, dnu, dmin,
                            (float(window[0]), float(window[1])))


# --------------------------------------------------------------------------
# profile quantities


def momentum_density(u: NodalField, alpha: float) -> NodalField:
    """Weak ``m = u - alpha^2 u_xx``: solve ``M m = M u + alpha^2 K u``."""
    mass = HelmholtzSystem(u.mesh, 0.0)
    ku = stiffness_matrix(u.mesh).matvec(u.values)
    return NodalField(u.mesh, u.values + alpha**2 * mass.solve(ku))


def h1_energy(u: NodalField, alpha: float) -> float:
    s = u.slopes()
    return 0.5 * integrate(u.mesh, u.at_quadrature() ** 2 + alpha**2 * s[:, None] ** 2)


def steepening_check(u: NodalField, alpha: float):
    """Return ``(s, threshold, satisfied)``.

    ``s`` is the most negative cell slope within half a period to the right
    of the global maximum; breaking is predicted when ``s < -sqrt(2 H1 / alpha^3)``.
    """
    mesh = u.mesh
    n = mesh.n_cells
    top = int(np.argmax(u.values))
    cells = (top + np.arange(n // 2)) % n
    slopes = u.slopes()[cells]
    s = float(slopes.min())
    if not s < 0:
        raise ValueError("profile has no negative slope to the right of its maximum")
    threshold = float(np.sqrt(2.0 * h1_energy(u, alpha) / alpha**3))
    return s, threshold, bool(s < -threshold)

"""Spatial noise fields and seeded Brownian increment tables."""
from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

__all__ = [
    "ConstantNoise",
    "FourierNoise",
    "NoiseBasis",
    "BrownianPath",
    "eval_xi",
    "sample_path",
    "coarsen_path",
    "derive_seed",
    "write_path",
    "read_path",
    "export_path_csv",
]


@dataclass(frozen=True)
class ConstantNoise:
    xi: float

    def __call__(self, x, order: int = 0):
        x = np.asarray(x, dtype=float)
        if order == 0:
            return np.full_like(x, self.xi)
        if order in (1, 2):
            return np.zeros_like(x)
        raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")


@dataclass(frozen=True)
class FourierNoise:
    """``xi * (C cos(2 pi j x / L) + D sin(2 pi j x / L))``."""

    mode: int
    C: float
    D: float
    xi: float
    L: float

    def __post_init__(self):
        if int(self.mode) != self.mode or self.mode < 1:
            raise ValueError(f"Fourier mode must be a positive integer, got {self.mode}")
        if self.L <= 0:
            raise ValueError("domain length must be positive")

    @property
    def wavenumber(self) -> float:
        return 2 * np.pi * self.mode / self.L

    def __call__(self, x, order: int = 0):
        k = self.wavenumber
        kx = k * np.asarray(x, dtype=float)
        c, s = np.cos(kx), np.sin(kx)
        if order == 0:
            return self.xi * (self.C * c + self.D * s)
        if order == 1:
            return self.xi * k * (-self.C * s + self.D * c)
        if order == 2:
            return -self.xi * k * k * (self.C * c + self.D * s)
        raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")


NoiseComponent = Union[ConstantNoise, FourierNoise]


def eval_xi(component: NoiseComponent, x, order: int = 0):
    return component(x, order)


class NoiseBasis(tuple):
    """Immutable sequence of noise components."""

    def __new__(cls, components: Sequence[NoiseComponent] = ()):
        return super().__new__(cls, components)

    def evaluate(self, x, order: int = 0) -> np.ndarray:
        """Values of every component, shape ``(len(self),) + x.shape``."""
        x = np.asarray(x, dtype=float)
        if not self:
            return np.zeros((0,) + x.shape)
        return np.stack([c(x, order) for c in self])

    @property
    def is_constant(self) -> bool:
        return all(isinstance(c, ConstantNoise) for c in self)


@dataclass(frozen=True, eq=False)
class BrownianPath:
    seed: int
    dt: float
    increments: np.ndarray  # (n_steps, n_components)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2:
            raise ValueError("increments must be a 2D (n_steps, n_components) table")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def n_components(self) -> int:
        return self.increments.shape[1]

    def values(self) -> np.ndarray:
        """Cumulative Brownian values W(t_i), including W(0) = 0."""
        W = np.zeros((self.n_steps + 1, self.n_components))
        np.cumsum(self.increments, axis=0, out=W[1:])
        return W

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.increments, dtype="<f8").tobytes()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, BrownianPath):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.dt == other.dt
            and np.array_equal(self.increments, other.increments)
        )

    @classmethod
    def zero(cls, dt: float, n_steps: int, n_components: int = 1) -> "BrownianPath":
        return cls(0, dt, np.zeros((n_steps, n_components)))


def _as_seed(seed: int) -> int:
    return int(seed) % 2**64


def derive_seed(seed: int, index: int) -> int:
    """Deterministic 64-bit child seed for realization ``index``."""
    lo, hi = np.random.SeedSequence([_as_seed(seed), int(index)]).generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)


def sample_path(seed: int, dt: float, n_steps: int, n_components: int = 1) -> BrownianPath:
    """Draw a reproducible table of N(0, dt) increments.

    Component ``j`` uses its own Philox stream keyed by ``(seed, j)``, so
    adding components never changes the existing columns.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if n_steps < 1:
        raise ValueError("need at least one step")
    seed = _as_seed(seed)
    inc = np.empty((int(n_steps), int(n_components)))
    sd = np.sqrt(dt)
    for j in range(n_components):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, j])))
        inc[:, j] = rng.standard_normal(int(n_steps)) * sd
    return BrownianPath(seed, float(dt), inc)


def coarsen_path(path: BrownianPath, M: int) -> BrownianPath:
    """Sum blocks of ``M`` consecutive increments (pathwise coupling)."""
    if int(M) != M or M < 1:
        raise ValueError(f"coarsening factor must be a positive integer, got {M}")
    M = int(M)
    if path.n_steps % M:
        raise ValueError(f"factor {M} does not divide {path.n_steps} steps")
    if M == 1:
        return path
    blocks = path.increments.reshape(path.n_steps // M, M, path.n_components)
    coarse = blocks[:, 0, :].copy()
    for k in range(1, M):
        coarse += blocks[:, k, :]
    return BrownianPath(path.seed, path.dt * M, coarse)


# --------------------------------------------------------------------------
# persistence

_MAGIC = b"BPATH\x00\x00\x00"
_HEADER = struct.Struct("<8sIQdQI")  # magic, version, seed, dt, n_steps, n_components
FORMAT_VERSION = 1


def write_path(path: BrownianPath, filename) -> None:
    """Little-endian binary: header then float64 increments, row-major."""
    header = _HEADER.pack(_MAGIC, FORMAT_VERSION, path.seed, path.dt, path.n_steps, path.n_components)
    with open(filename, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(path.increments, dtype="<f8").tobytes())


def read_path(filename) -> BrownianPath:
    data = Path(filename).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{filename}: truncated path file")
    magic, version, seed, dt, n_steps, n_comp = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError(f"{filename}: not a Brownian path file")
    if version != FORMAT_VERSION:
        raise ValueError(f"{filename}: unsupported format version {version}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != n_steps * n_comp:
        raise ValueError(f"{filename}: expected {n_steps * n_comp} increments, found {body.size}")
    return BrownianPath(int(seed), float(dt), body.reshape(n_steps, n_comp).astype(float))


def export_path_csv(path: BrownianPath, filename) -> None:
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"dW{j}" for j in range(path.n_components)])
        for row in path.increments:
            w.writerow([repr(float(v)) for v in row])

"""Experiment configuration: presets, flat ``key = value`` files and overrides."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Tuple

from .noise import ConstantNoise, FourierNoise, NoiseBasis

__all__ = ["PRESETS", "PROFILES", "ConfigError", "ExperimentConfig", "preset_config",
           "parse_config_text", "read_config_file", "noise_basis"]

PRESETS = ("converge-dx", "converge-dt", "deterministic-steep", "deterministic-shallow", "ensemble")
PROFILES = ("steep", "shallow", "peakon")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = "deterministic-steep"
    L: float = 40.0
    alpha: float = 1.0
    cells: Tuple[int, ...] = (1000, 1500, 2000, 2500, 3000)
    dt: float = 5e-4
    t_end: float = 20.0
    xi: float = 0.0
    xi_components: Tuple[Tuple[int, float, float, float], ...] = ()
    realizations: int = 1
    seed: int = 0
    snapshot_times: Tuple[float, ...] = ()
    window_t0: float = 15.0
    window_t1: float = 20.0
    output_dir: str = "out"
    jobs: int = 0  # 0: one worker per available CPU
    # study-specific keys
    profile: str = "steep"
    fine_dt: float = 1e-5
    dts: Tuple[float, ...] = (1e-3, 5e-4, 2.5e-4)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {', '.join(PROFILES)}")
        if not self.cells:
            raise ConfigError("cells must not be empty")
        if any(b <= a for a, b in zip(self.cells, self.cells[1:])):
            raise ConfigError("cells must be strictly increasing")
        if min(self.cells) < 3:
            raise ConfigError("every resolution needs at least 3 cells")
        if self.realizations < 1:
            raise ConfigError("realizations must be at least 1")
        if not (self.dt > 0 and self.fine_dt > 0 and all(d > 0 for d in self.dts)):
            raise ConfigError("time steps must be positive")
        if self.L <= 0 or self.alpha <= 0:
            raise ConfigError("L and alpha must be positive")
        if self.t_end < 0:
            raise ConfigError("t_end must be non-negative")
        if self.window_t1 < self.window_t0:
            raise ConfigError("window_t1 must not precede window_t0")
        if self.jobs < 0:
            raise ConfigError("jobs must be non-negative")

    @property
    def window(self):
        return (self.window_t0, self.window_t1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cells"] = list(self.cells)
        d["xi_components"] = [list(c) for c in self.xi_components]
        d["snapshot_times"] = list(self.snapshot_times)
        d["dts"] = list(self.dts)
        return d

    def payload_dict(self) -> dict:
        """Keys that determine results; output location and worker count are excluded."""
        d = self.to_dict()
        del d["output_dir"], d["jobs"]
        return d


_DESK = dict(cells=(500, 750, 1000), realizations=10)

_PRESET_DEFAULTS = {
    "converge-dx": dict(profile="peakon", cells=(1000, 2000, 4000, 8000), dt=1e-5, t_end=0.1, xi=0.0),
    "converge-dt": dict(profile="peakon", cells=(4000,), fine_dt=1e-5, dts=(1e-3, 5e-4, 2.5e-4),
                        t_end=0.1, xi=1.0, realizations=16),
    "deterministic-steep": dict(profile="steep", cells=_DESK["cells"], snapshot_times=(0.0, 1.0, 2.0, 3.0, 5.0, 10.0, 20.0)),
    "deterministic-shallow": dict(profile="shallow", cells=_DESK["cells"], snapshot_times=(0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 20.0)),
    "ensemble": dict(profile="steep", xi=0.1, **_DESK),
}

PAPER_SCALE = dict(cells=(1000, 1500, 2000, 2500, 3000), realizations=100)


def preset_config(preset: str, **overrides) -> ExperimentConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    base = dict(_PRESET_DEFAULTS[preset])
    base.update(overrides)
    return ExperimentConfig(preset=preset, **base)


# --------------------------------------------------------------------------
# parsing


def _floats(text):
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _ints(text):
    out = []
    for v in text.replace(" ", "").split(","):
        if not v:
            continue
        f = float(v)
        if f != int(f):
            raise ConfigError(f"expected an integer, got {v!r}")
        out.append(int(f))
    return tuple(out)


def _components(text):
    comps = []
    for item in text.replace(" ", "").split(","):
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 4:
            raise ConfigError(f"noise component {item!r} must be j:C:D:xi")
        j = float(parts[0])
        if j != int(j) or j < 1:
            raise ConfigError(f"Fourier mode must be a positive integer in {item!r}")
        comps.append((int(j), float(parts[1]), float(parts[2]), float(parts[3])))
    return tuple(comps)


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    return v


PARSERS = {
    "preset": str,
    "L": float,
    "alpha": float,
    "cells": _ints,
    "dt": float,
    "t_end": float,
    "xi": float,
    "xi_components": _components,
    "realizations": int,
    "seed": _seed,
    "snapshot_times": _floats,
    "window_t0": float,
    "window_t1": float,
    "output_dir": str,
    "jobs": int,
    "profile": str,
    "fine_dt": float,
    "dts": _floats,
    "scale": str,
}

assert set(PARSERS) - {"scale"} == {f.name for f in fields(ExperimentConfig)}


def parse_value(key: str, text: str):
    if key not in PARSERS:
        raise ConfigError(f"unknown configuration key {key!r}")
    try:
        return PARSERS[key](text.strip())
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(f"bad value for {key!r}: {text!r} ({err})") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = parse_value(key, value)
        except ConfigError as err:
            raise ConfigError(f"{source}:{lineno}: {err}") from None
    return out


def read_config_file(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err.strerror}") from None
    return parse_config_text(text, str(path))


def build_config(preset: str, values: dict) -> ExperimentConfig:
    """Preset defaults, then ``scale = paper`` if requested, then explicit values."""
    values = dict(values)
    scale = values.pop("scale", "desk")
    if scale not in ("desk", "paper"):
        raise ConfigError("scale must be 'desk' or 'paper'")
    values.pop("preset", None)
    base = dict(_PRESET_DEFAULTS.get(preset, {}))
    if scale == "paper" and preset in ("deterministic-steep", "deterministic-shallow", "ensemble"):
        base.update(PAPER_SCALE)
    base.update(values)
    return ExperimentConfig(preset=preset, **base)


def noise_basis(config: ExperimentConfig) -> NoiseBasis:
    """Constant field of amplitude ``xi`` plus any Fourier components; zero amplitudes are dropped."""
    comps = []
    if config.xi != 0:
        comps.append(ConstantNoise(config.xi))
    for j, C, D, xi in config.xi_components:
        if xi != 0:
            comps.append(FourierNoise(j, C, D, xi, config.L))
    return NoiseBasis(comps)


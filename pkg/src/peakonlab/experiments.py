"""Convergence studies, deterministic formation runs and noise ensembles."""
from __future__ import annotations

import csv
import json
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .config import ExperimentConfig, noise_basis
from .diagnostics import (
    DiagnosticSeries,
    FormationSummary,
    fit_gradient,
    series_from_trajectory,
    summarize,
)
from .fem import Mesh1DPeriodic, NodalField, build_mesh, l2_error, project_function
from .noise import BrownianPath, coarsen_path, derive_seed, sample_path, write_path
from .peakons import GreensKernel, PeakonState, integrate_milstein, peakon_nodal_ic
from .solver import SolverConfig, SolverError, Trajectory, run_simulation

__all__ = [
    "steep_profile",
    "shallow_profile",
    "initial_field",
    "ConvergenceTable",
    "DeterministicResult",
    "EnsembleResult",
    "run_converge_dx",
    "run_converge_dt",
    "run_deterministic",
    "run_resolutions",
    "run_ensemble",
    "histogram",
    "write_series_csv",
    "read_series_csv",
    "dump_json",
]

log = logging.getLogger(__name__)


def _sech_bump(L: float, width: float):
    # distance to the crest is taken periodically so the profile has no seam at x = 0
    return lambda x: 0.5 / np.cosh((np.mod(x - L / 4 + L / 2, L) - L / 2) / width)


def steep_profile(L: float):
    return _sech_bump(L, L / 240)


def shallow_profile(L: float):
    return _sech_bump(L, L / 40)


def initial_field(profile: str, mesh: Mesh1DPeriodic, alpha: float = 1.0) -> NodalField:
    L = mesh.length
    if profile == "steep":
        return project_function(mesh, steep_profile(L))
    if profile == "shallow":
        return project_function(mesh, shallow_profile(L))
    if profile == "peakon":
        return peakon_nodal_ic(PeakonState([1.0], [L / 2]), GreensKernel(L, alpha), mesh)
    raise ValueError(f"unknown profile {profile!r}")


# --------------------------------------------------------------------------
# output helpers


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _write_metadata(outdir: Path, started: float, config: ExperimentConfig) -> None:
    # wall-clock data kept apart from the reproducible payload
    dump_json(
        {
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
            "elapsed_s": round(time.time() - started, 3),
            "host": platform.node(),
            "python": platform.python_version(),
            "output_dir": config.output_dir,
            "jobs": config.jobs,
        },
        outdir / "metadata.json",
    )


def _fmt(v) -> str:
    return repr(float(v))


def _time_tag(t: float) -> str:
    return f"{t:g}"


def write_field_csv(path, mesh: Mesh1DPeriodic, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "u"])
        for x, u in zip(mesh.nodes, values):
            w.writerow([_fmt(x), _fmt(u)])


def write_steps_csv(path, traj: Trajectory) -> None:
    rec = traj.records
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", "min_ux", "max_ux", "cell_min", "cell_max", "H1", "int_u"])
        for i, t in enumerate(traj.times):
            w.writerow([i, _fmt(t), _fmt(rec["min_ux"][i]), _fmt(rec["max_ux"][i]),
                        int(rec["cell_min"][i]), int(rec["cell_max"][i]),
                        _fmt(rec["H1"][i]), _fmt(rec["int_u"][i])])


SERIES_HEADER = ["t", "nu", "min_ux", "x_infl_left", "x_infl_right", "H1", "int_u", "min_m"]


def write_series_csv(path, s: DiagnosticSeries) -> None:
    """``x_infl_left`` is the max-slope cell centre, ``x_infl_right`` the min-slope one."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SERIES_HEADER)
        for i, t in enumerate(s.times):
            w.writerow([_fmt(t), _fmt(s.nu[i]), _fmt(s.min_slope[i]),
                        _fmt(s.inflection_positions[i, 0]), _fmt(s.inflection_positions[i, 1]),
                        _fmt(s.H1[i]), _fmt(s.total_u[i]), _fmt(s.momentum_min[i])])


def read_series_csv(path, dx: float) -> DiagnosticSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SERIES_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    if rows.size == 0:
        raise ValueError(f"{path}: no data rows")
    return DiagnosticSeries(dx, rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3:5].copy(),
                            rows[:, 5], rows[:, 6], rows[:, 7])


def histogram(values) -> tuple:
    """Freedman-Diaconis bins over the finite values; returns ``(edges, counts)``."""
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return np.array([]), np.array([], dtype=int)
    if np.ptp(v) == 0 or np.subtract(*np.percentile(v, [75, 25])) == 0:
        edges = np.array([v.min() - 0.5, v.max() + 0.5]) if np.ptp(v) == 0 else np.histogram_bin_edges(v, bins="sturges")
    else:
        edges = np.histogram_bin_edges(v, bins="fd")
    counts, edges = np.histogram(v, bins=edges)
    return edges, counts


def write_histogram_csv(path, values) -> None:
    edges, counts = histogram(values)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([_fmt(lo), _fmt(hi), int(c)])


# --------------------------------------------------------------------------
# convergence studies


@dataclass
class ConvergenceTable:
    steps: np.ndarray  # dx or dt values
    errors: np.ndarray  # mean error per step size
    order: float  # OLS slope of log error against log step
    per_realization: Optional[np.ndarray] = None
    oracle_states: List[PeakonState] = field(default_factory=list)

    def rows(self):
        return list(zip(self.steps.tolist(), self.errors.tolist()))


def _peakon_setup(config: ExperimentConfig):
    kernel = GreensKernel(config.L, config.alpha)
    return kernel, PeakonState([1.0], [config.L / 2])


def _oracle(state0, basis, kernel, path: BrownianPath, n_steps: int, stride: int):
    final, t, p, q = integrate_milstein(state0, basis, kernel, path, n_steps=n_steps, stride=stride)
    return final, np.column_stack([t, p[:, 0], q[:, 0]])


def _write_oracle_csv(path, table) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "p", "q"])
        for t, p, q in table:
            w.writerow([_fmt(t), _fmt(p), _fmt(q)])


def run_converge_dx(config: ExperimentConfig, write: bool = True) -> ConvergenceTable:
    """FEM vs Milstein-reconstructed peakon at ``t_end`` for each resolution, one shared path."""
    started = time.time()
    kernel, s0 = _peakon_setup(config)
    basis = noise_basis(config)
    n_steps = SolverConfig(config.alpha, config.dt, config.t_end).n_steps
    if len(basis):
        path = sample_path(derive_seed(config.seed, 0), config.dt, max(n_steps, 1), len(basis))
    else:
        path = BrownianPath.zero(config.dt, max(n_steps, 1), 0)
    final, oracle_tab = _oracle(s0, basis, kernel, path, n_steps, max(1, n_steps // 1000))
    errs, dxs = [], []
    solver_cfg = SolverConfig(config.alpha, config.dt, config.t_end)
    for n in config.cells:
        mesh = build_mesh(config.L, n)
        u0 = peakon_nodal_ic(s0, kernel, mesh)
        traj = run_simulation(u0, solver_cfg, basis, path)
        errs.append(l2_error(traj.final.u, peakon_nodal_ic(final, kernel, mesh)))
        dxs.append(mesh.dx)
        log.info("converge-dx: n=%d dx=%g error=%.6e", n, mesh.dx, errs[-1])
    dxs, errs = np.array(dxs), np.array(errs)
    order = fit_gradient(np.log(dxs), np.log(errs)) if len(dxs) > 1 else float("nan")
    table = ConvergenceTable(dxs, errs, order, oracle_states=[final])
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "convergence_dx.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dx", "error"])
            for dx, e in table.rows():
                w.writerow([_fmt(dx), _fmt(e)])
        _write_oracle_csv(out / "oracle.csv", oracle_tab)
        dump_json({"config": config.payload_dict(), "order": order, "dx": dxs.tolist(), "error": errs.tolist(),
                   "path_sha256": path.digest()}, out / "summary.json")
        _write_metadata(out, started, config)
    return table


def run_converge_dt(config: ExperimentConfig, write: bool = True) -> ConvergenceTable:
    """Coarsened-path FEM runs against a fine-step Milstein oracle on a fixed mesh.

    Errors are averaged over ``config.realizations`` independent paths.
    """
    started = time.time()
    kernel, s0 = _peakon_setup(config)
    basis = noise_basis(config)
    if not len(basis):
        raise ValueError("converge-dt needs a non-zero noise amplitude")
    factors = []
    for dt in config.dts:
        M = dt / config.fine_dt
        if abs(M - round(M)) > 1e-9 * M or round(M) < 1:
            raise ValueError(f"dt={dt} is not a multiple of the fine step {config.fine_dt}")
        factors.append(int(round(M)))
    n_fine = SolverConfig(config.alpha, config.fine_dt, config.t_end).n_steps
    for M in factors:
        if n_fine % M:
            raise ValueError(f"t_end is not a whole number of steps of size {M * config.fine_dt}")
    mesh = build_mesh(config.L, config.cells[0])
    u0 = peakon_nodal_ic(s0, kernel, mesh)
    errs = np.empty((config.realizations, len(factors)))
    finals = []
    out = Path(config.output_dir)
    if write:
        (out / "paths").mkdir(parents=True, exist_ok=True)
    for r in range(config.realizations):
        fine = sample_path(derive_seed(config.seed, r), config.fine_dt, n_fine, len(basis))
        final, oracle_tab = _oracle(s0, basis, kernel, fine, n_fine, max(1, n_fine // 1000))
        finals.append(final)
        ref = peakon_nodal_ic(final, kernel, mesh)
        for k, M in enumerate(factors):
            coarse = coarsen_path(fine, M)
            traj = run_simulation(u0, SolverConfig(config.alpha, coarse.dt, config.t_end), basis, coarse)
            errs[r, k] = l2_error(traj.final.u, ref)
        log.info("converge-dt: realization %d errors %s", r, errs[r])
        if write:
            write_path(fine, out / "paths" / f"realization_{r}.bin")
            _write_oracle_csv(out / f"oracle_r{r}.csv", oracle_tab)
    dts = np.array([M * config.fine_dt for M in factors])
    mean = errs.mean(axis=0)
    order = fit_gradient(np.log(dts), np.log(mean)) if len(dts) > 1 else float("nan")
    table = ConvergenceTable(dts, mean, order, errs, finals)
    if write:
        with open(out / "convergence_dt.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dt", "error"] + [f"error_r{r}" for r in range(config.realizations)])
            for k, dt in enumerate(dts):
                w.writerow([_fmt(dt), _fmt(mean[k])] + [_fmt(e) for e in errs[:, k]])
        dump_json({"config": config.payload_dict(), "order": order, "dt": dts.tolist(), "error": mean.tolist()},
                  out / "summary.json")
        _write_metadata(out, started, config)
    return table


# --------------------------------------------------------------------------
# formation experiments


@dataclass
class DeterministicResult:
    summary: Optional[FormationSummary]
    series: Dict[int, DiagnosticSeries]
    trajectories: Dict[int, Trajectory]
    initial: Dict[int, NodalField]


def run_resolutions(config: ExperimentConfig, path: Optional[BrownianPath] = None, keep_fields: bool = True):
    """Run every configured resolution on the same Brownian path."""
    basis = noise_basis(config)
    solver_cfg = SolverConfig(config.alpha, config.dt, config.t_end,
                              snapshot_times=config.snapshot_times if keep_fields else ())
    if len(basis) and path is None:
        path = sample_path(config.seed, config.dt, max(solver_cfg.n_steps, 1), len(basis))
    series, trajs, initial = {}, {}, {}
    for n in config.cells:
        mesh = build_mesh(config.L, n)
        u0 = initial_field(config.profile, mesh, config.alpha)
        traj = run_simulation(u0, solver_cfg, basis, path)
        series[n] = series_from_trajectory(traj)
        if keep_fields:
            trajs[n] = traj
            initial[n] = u0
    return series, trajs, initial, path


def _formation_summary(config, series):
    if len(series) < 2:
        return None
    return summarize([series[n] for n in config.cells], config.window)


def _summary_payload(summary: Optional[FormationSummary]):
    if summary is None:
        return {"Pi": None, "omega": None}
    return {"Pi": summary.Pi, "omega": summary.omega}


def run_deterministic(config: ExperimentConfig, which: Optional[str] = None, write: bool = True) -> DeterministicResult:
    """All configured resolutions from the steep or shallow profile.

    With ``xi`` or ``xi_components`` set, a single noise path (from ``seed``)
    is shared by all resolutions.
    """
    started = time.time()
    if which is not None:
        config = replace(config, profile=which)
    series, trajs, initial, path = run_resolutions(config)
    summary = _formation_summary(config, series)
    result = DeterministicResult(summary, series, trajs, initial)
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for n in config.cells:
            traj = trajs[n]
            for t_req, (t_act, values) in traj.snapshots.items():
                write_field_csv(out / f"fields_t{_time_tag(t_req)}_n{n}.csv", traj.mesh, values)
            write_series_csv(out / f"diagnostics_n{n}.csv", series[n])
            write_steps_csv(out / f"steps_n{n}.csv", traj)
        payload = {"config": config.payload_dict(), **_summary_payload(summary)}
        if summary is not None:
            payload["times"] = summary.times.tolist()
            payload["dnu_ddx"] = summary.dnu_ddx.tolist()
            payload["dminux_ddx"] = summary.dminux_ddx.tolist()
        if path is not None:
            payload["path_sha256"] = path.digest()
            (out / "paths").mkdir(exist_ok=True)
            write_path(path, out / "paths" / "realization_0.bin")
        dump_json(payload, out / "summary.json")
        _write_metadata(out, started, config)
    return result


# --------------------------------------------------------------------------
# ensembles


@dataclass
class EnsembleResult:
    rows: List[dict]
    Pi: np.ndarray
    omega: np.ndarray
    failures: int


def _realization(config: ExperimentConfig, r: int):
    """Return ``(summary_row, path)`` for realization ``r``."""
    seed_r = derive_seed(config.seed, r)
    row = {"realization": r, "seed": seed_r}
    basis = noise_basis(config)
    n_steps = SolverConfig(config.alpha, config.dt, config.t_end).n_steps
    path = sample_path(seed_r, config.dt, max(n_steps, 1), len(basis)) if len(basis) else None
    row["path_sha256"] = path.digest() if path is not None else None
    try:
        series, _, _, _ = run_resolutions(config, path, keep_fields=False)
        summary = summarize([series[n] for n in config.cells], config.window)
        row.update(Pi=summary.Pi, omega=summary.omega, error=None)
    except (SolverError, ValueError) as err:
        log.warning("realization %d failed: %s", r, err)
        row.update(Pi=None, omega=None, error=str(err))
    return row, path


def run_ensemble(config: ExperimentConfig, write: bool = True) -> EnsembleResult:
    """One Brownian path per realization, shared by all resolutions.

    Results are ordered by realization index whatever the worker count.
    """
    started = time.time()
    if len(config.cells) < 2:
        raise ValueError("an ensemble needs at least two resolutions")
    jobs = config.jobs or os.cpu_count() or 1
    idx = range(config.realizations)
    if jobs > 1 and config.realizations > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, config.realizations)) as pool:
            results = list(pool.map(_realization, [config] * config.realizations, idx))
    else:
        results = [_realization(config, r) for r in idx]
    rows = [r for r, _ in results]
    Pi = np.array([np.nan if r["Pi"] is None else r["Pi"] for r in rows])
    omega = np.array([np.nan if r["omega"] is None else r["omega"] for r in rows])
    failures = sum(r["error"] is not None for r in rows)
    if write:
        out = Path(config.output_dir)
        (out / "paths").mkdir(parents=True, exist_ok=True)
        for r, path in results:
            if path is not None:
                write_path(path, out / "paths" / f"realization_{r['realization']}.bin")
        with open(out / "ensemble.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["realization", "seed", "Pi", "omega", "error"])
            for r in rows:
                w.writerow([r["realization"], r["seed"],
                            "" if r["Pi"] is None else _fmt(r["Pi"]),
                            "" if r["omega"] is None else _fmt(r["omega"]),
                            r["error"] or ""])
        write_histogram_csv(out / "histogram_Pi.csv", Pi)
        write_histogram_csv(out / "histogram_omega.csv", omega)
        dump_json({"config": config.payload_dict(), "realizations": rows, "failures": failures},
                  out / "summary.json")
        _write_metadata(out, started, config)
    return EnsembleResult(rows, Pi, omega, failures)


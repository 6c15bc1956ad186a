"""Stage runners wiring propagator -> lindblad -> measures -> conjugate -> bloch.

Every stage reads its inputs from files in the output directory and writes
its own artifacts there, so running ``full`` is the same as chaining the
single stages.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from .bath import OhmicBath
from .bloch import affine_decomposition, volume_check
from .config import RunConfig
from .conjugate import clip_rates, exact_trajectory, propagate_map, propagate_state, validate_trajectory
from .errors import MissingArtifactError
from .lindblad import analyze, generator, transfer_matrix
from .measures import measure_series
from .propagator import (
    REFERENCE_STATE,
    MapSeries,
    SystemSpec,
    dephasing_map,
    load_map,
    quapi_map,
    save_map,
)
from .serialize import load_canonical, save_canonical, write_table
from .superop import choi_min_eigenvalue

log = logging.getLogger(__name__)

STAGES = ("simulate", "convert", "measure", "conjugate", "bloch")
MAP_FILE = "map.txt"
FORM_FILE = "canonical.txt"
CONJUGATE_MAP_FILE = "conjugate_map.txt"


def _path(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.outputs.directory, name)


def _wants(cfg, table):
    return table in cfg.outputs.tables


def _require(path):
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    return path


def input_map_path(cfg: RunConfig) -> str:
    return _require(_path(cfg, MAP_FILE))


@dataclass
class SimulationInfo:
    converged: bool | None = None
    gate_error: float | None = None


def build_series(cfg: RunConfig) -> MapSeries:
    """The map series requested by the config's backend."""
    system = SystemSpec(cfg.system.omega, cfg.system.eps)
    bath = OhmicBath(cfg.bath.xi, cfg.bath.omega_c, cfg.bath.beta)
    dt, n = cfg.grid.dt, cfg.grid.n_steps
    if cfg.backend == "quapi":
        q = cfg.quapi
        return quapi_map(
            system, bath, dt, n, q.kmax,
            svd_cutoff=q.svd_cutoff,
            memory_budget=q.memory_budget,
            convergence_check=q.convergence_check,
            convergence_tol=cfg.tolerances.convergence,
        )
    if cfg.backend == "dephasing":
        if cfg.system.omega != 0:
            log.warning("dephasing backend ignores system.omega = %g", cfg.system.omega)
        return dephasing_map(bath, cfg.system.eps, dt * np.arange(n + 1))
    return load_map(_require(cfg.map_file))


def stage_simulate(cfg: RunConfig) -> SimulationInfo:
    os.makedirs(cfg.outputs.directory, exist_ok=True)
    series = build_series(cfg)
    save_map(series, _path(cfg, MAP_FILE))
    log.info("wrote %s", _path(cfg, MAP_FILE))
    return SimulationInfo(series.converged, series.convergence_error)


def stage_convert(cfg: RunConfig):
    series = load_map(input_map_path(cfg))
    result = analyze(series)
    save_canonical(result.form, _path(cfg, FORM_FILE))
    if _wants(cfg, "rates"):
        m = result.form.gammas.shape[1]
        header = ["t"] + [f"gamma_{k}" for k in range(1, m + 1)]
        rows = [[t, *g] for t, g in zip(result.form.t_grid, result.form.gammas)]
        write_table(_path(cfg, "rates.csv"), header, rows)
    return result


def _load_form(cfg):
    return load_canonical(_require(_path(cfg, FORM_FILE)))


def stage_measure(cfg: RunConfig):
    form = _load_form(cfg)
    ms = measure_series(form)
    if _wants(cfg, "measures"):
        header = ["t", "f", "g", "half_d_times_g_residual", "index"]
        rows = zip(ms.t_grid, ms.f, ms.g, ms.equivalence_residual, ms.index)
        write_table(_path(cfg, "measures.csv"), header, rows)
    return ms


@dataclass
class ConjugateResult:
    exact: object
    lindblad: object
    markov: object
    markov_map: MapSeries


def stage_conjugate(cfg: RunConfig) -> ConjugateResult:
    series = load_map(input_map_path(cfg))
    form = _load_form(cfg)
    clipped = clip_rates(form)
    exact = exact_trajectory(series, REFERENCE_STATE)
    lind = propagate_state(form, REFERENCE_STATE)
    markov = propagate_state(clipped, REFERENCE_STATE)
    for traj in (exact, lind, markov):
        validate_trajectory(traj)
    markov_map = propagate_map(clipped)
    save_map(markov_map, _path(cfg, CONJUGATE_MAP_FILE))
    if _wants(cfg, "dynamics"):
        header = ["t"]
        cols = []
        for label, part in (("p0", lambda s: s[:, 0, 0].real), ("re01", lambda s: s[:, 0, 1].real),
                            ("im01", lambda s: s[:, 0, 1].imag)):
            for tag, traj in (("exact", exact), ("lindblad", lind), ("markov", markov)):
                header.append(f"{label}_{tag}")
                cols.append(part(traj.states))
        rows = zip(series.t_grid, *cols)
        write_table(_path(cfg, "dynamics.csv"), header, rows)
    return ConjugateResult(exact, lind, markov, markov_map)


@dataclass
class BlochResult:
    affine: object
    volume: object
    markov_affine: object


def stage_bloch(cfg: RunConfig) -> BlochResult:
    series = load_map(input_map_path(cfg))
    conj_path = _path(cfg, CONJUGATE_MAP_FILE)
    if os.path.exists(conj_path):
        markov_map = load_map(conj_path)
    else:
        markov_map = propagate_map(clip_rates(_load_form(cfg)))
    affine = affine_decomposition(series)
    volume = volume_check(affine, generator(transfer_matrix(series)))
    markov = affine_decomposition(markov_map)
    if _wants(cfg, "bloch"):
        header = ["t"] + [f"M{i}{j}" for i in range(1, 4) for j in range(1, 4)]
        header += ["C1", "C2", "C3", "detM", "trB", "eq29_residual", "S_eigen1", "S_eigen2", "S_eigen3"]
        header += ["C1_markov", "C2_markov", "C3_markov", "reflection"]
        rows = []
        for n, t in enumerate(affine.t_grid):
            s_eig = np.linalg.eigvalsh(affine.S[n])
            rows.append([
                t, *affine.M[n].ravel(), *affine.C[n], affine.detM[n], volume.trace_B[n],
                volume.residual[n], *s_eig, *markov.C[n], bool(affine.reflection[n]),
            ])
        write_table(_path(cfg, "bloch.csv"), header, rows)
    return BlochResult(affine, volume, markov)


SUMMARY_HEADER = [
    "name", "backend", "dt", "n_steps", "kmax", "converged", "gate_error",
    "max_f", "max_g", "equivalence_residual", "lindblad_match_error",
    "index_0", "index_1", "index_2", "index_3",
    "max_trB", "volume_residual", "conjugate_choi_min",
    "p0_final_exact", "p0_final_lindblad", "p0_final_markov",
]


def _opt(x):
    return float("nan") if x is None else x


def summarize(cfg, info, ms, conj, bl):
    hist = np.bincount(ms.index, minlength=4)
    diff = conj.lindblad.states - conj.exact.states
    cp = min(choi_min_eigenvalue(m, 2) for m in conj.markov_map.maps)
    converged = "" if info.converged is None else ("1" if info.converged else "0")
    row = [
        cfg.name, cfg.backend, cfg.grid.dt, cfg.grid.n_steps, cfg.quapi.kmax, converged, _opt(info.gate_error),
        ms.f.max(), ms.g.max(), ms.equivalence_residual.max(), np.abs(diff).max(),
        *hist[:4], bl.volume.trace_B.max(), bl.volume.max_residual, cp,
        conj.exact.states[-1, 0, 0].real, conj.lindblad.states[-1, 0, 0].real, conj.markov.states[-1, 0, 0].real,
    ]
    return dict(zip(SUMMARY_HEADER, row))


def _summary_text(summary):
    lines = [f"run {summary['name']} ({summary['backend']})"]
    if summary["converged"] != "":
        state = "passed" if summary["converged"] == "1" else "FAILED"
        lines.append(f"  convergence gate {state}: max RDM change {summary['gate_error']:.3e}")
    hist = ", ".join(f"{k}: {summary[f'index_{k}']}" for k in range(4))
    lines.append(f"  non-Markov index histogram  {hist}")
    lines.append(f"  max f(t)                    {summary['max_f']:.6g}")
    lines.append(f"  max |f - (d/2) g|           {summary['equivalence_residual']:.3e}")
    lines.append(f"  Lindblad vs exact, max diff {summary['lindblad_match_error']:.3e}")
    lines.append(f"  volume ODE residual         {summary['volume_residual']:.3e}")
    return "\n".join(lines)


def run_pipeline(cfg: RunConfig, stop: str | None = None, echo=print) -> dict | None:
    """Run all stages in order (or up to ``stop``) and write the summary table."""
    if stop is not None and stop not in STAGES:
        raise ValueError(f"unknown stage {stop!r}")
    info = stage_simulate(cfg)
    if stop == "simulate":
        return None
    stage_convert(cfg)
    if stop == "convert":
        return None
    ms = stage_measure(cfg)
    if stop == "measure":
        return None
    conj = stage_conjugate(cfg)
    if stop == "conjugate":
        return None
    bl = stage_bloch(cfg)
    summary = summarize(cfg, info, ms, conj, bl)
    if _wants(cfg, "summary"):
        write_table(_path(cfg, "summary.csv"), SUMMARY_HEADER, [list(summary.values())])
    if echo is not None:
        echo(_summary_text(summary))
    return summary

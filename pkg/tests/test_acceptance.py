"""Acceptance criteria, one PASS/FAIL line each.

    pytest -m slow tests/test_acceptance.py -s

The path-sum maps (three parameter sets, each on the working grid and on
the halved grid of the convergence gate) take about half an hour on one
core.  They are cached under ``.acceptance-cache`` keyed by the source of
the modules that produce them, so later runs take a few minutes.
"""
import functools
import hashlib
import inspect
import os
from dataclasses import dataclass, replace

import numpy as np
import pytest
from scipy.integrate import quad

from nmlindblad import bath as bath_module
from nmlindblad import pathsum, pipeline, propagator
from nmlindblad.bath import OhmicBath
from nmlindblad.config import PRESETS, GridConfig, OutputConfig, QuapiConfig, RunConfig, SystemConfig, BathConfig
from nmlindblad.lindblad import analyze
from nmlindblad.propagator import MapSeries, SystemSpec, compare_refined, quapi_map, refined_run, save_map
from nmlindblad.superop import choi_min_eigenvalue

pytestmark = pytest.mark.slow

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CACHE = os.environ.get("NMLINDBLAD_ACCEPTANCE_CACHE", os.path.join(ROOT, ".acceptance-cache"))
SETS = ("set1", "set2", "set3")

FIDELITY_TOL = 2e-3
EQUIVALENCE_TOL = 1e-4
HERMITICITY_TOL = 1e-10
FIRST_ROW_TOL = 1e-8
TRACE_IDENTITY_TOL = 1e-10
VOLUME_TOL = 1e-5
DEPHASING_REL_TOL = 1e-6
LIMIT_RATE_TOL = 1e-6
LIMIT_H_TOL = 1e-5
STENCIL_ZERO_TOL = 1e-12
POPULATION_BAND = 0.02
# conjugate-trajectory integration tolerance is the trace-drift limit 1e-6
EQUILIBRIUM_SHIFT = 10 * 1e-6
CP_FLOOR = -1e-6
GATE_TOL = 5e-4

# criterion 4: 4th-order stencil error near t = 0.1 is 8e-6 relative at dt = 0.01
DEPHASING_DT = 0.005
# criterion 5: one-sided stencils at the grid ends need dt^2 < 1e-5
LIMIT_DT = 0.001


def report(capsys, criterion, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")


def _source_key(*parts):
    h = hashlib.sha256()
    for module in (pathsum, bath_module, propagator):
        h.update(inspect.getsource(module).encode())
    h.update(repr(parts).encode())
    return h.hexdigest()[:16]


def _cached(tag, parts, build):
    os.makedirs(CACHE, exist_ok=True)
    path = os.path.join(CACHE, f"{tag}-{_source_key(*parts)}.npy")
    if os.path.exists(path):
        return np.load(path)
    maps = build()
    np.save(path + ".tmp.npy", maps)
    os.replace(path + ".tmp.npy", path)
    return maps


def _physics(cfg):
    return SystemSpec(cfg.system.omega, cfg.system.eps), OhmicBath(cfg.bath.xi, cfg.bath.omega_c, cfg.bath.beta)


@dataclass
class SetRun:
    cfg: RunConfig
    gate: object
    analysis: object
    measures: object
    conjugate: object
    bloch: object

    @property
    def converged(self):
        return self.gate.passed


@functools.cache
def set_run(name, workdir):
    cfg = PRESETS[name]
    system, bath = _physics(cfg)
    q, g = cfg.quapi, cfg.grid
    parts = (name, g.dt, g.n_steps, q.kmax, q.svd_cutoff)
    maps = _cached(f"{name}-map", parts, lambda: quapi_map(
        system, bath, g.dt, g.n_steps, q.kmax, svd_cutoff=q.svd_cutoff).maps)
    series = MapSeries(2, g.dt, maps)
    ref = _cached(f"{name}-refined", parts, lambda: refined_run(
        series, system, bath, q.kmax, svd_cutoff=q.svd_cutoff).maps)
    gate = compare_refined(series, MapSeries(2, 0.5 * g.dt, ref), GATE_TOL)

    out = os.path.join(workdir, name)
    os.makedirs(out, exist_ok=True)
    map_path = os.path.join(out, "input_map.txt")
    save_map(series, map_path)
    cfg = replace(cfg, backend=f"file:{map_path}", outputs=OutputConfig(directory=out))
    pipeline.stage_simulate(cfg)
    return SetRun(
        cfg, gate,
        pipeline.stage_convert(cfg),
        pipeline.stage_measure(cfg),
        pipeline.stage_conjugate(cfg),
        pipeline.stage_bloch(cfg),
    )


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    workdir = str(tmp_path_factory.mktemp("acceptance"))
    return {name: set_run(name, workdir) for name in SETS}


def converged_runs(runs):
    return {k: r for k, r in runs.items() if r.converged}


def _fmt(values):
    return ", ".join(f"{k} {v:.2e}" for k, v in values.items())


def test_criterion_8_convergence_gate(runs, capsys):
    errors = {k: r.gate.error for k, r in runs.items()}
    ok = all(e < GATE_TOL for e in errors.values())
    report(capsys, 8, ok, f"max RDM change under dt/2 refinement < {GATE_TOL:g}: {_fmt(errors)}")
    assert ok


def _excluded(runs):
    skipped = sorted(set(runs) - set(converged_runs(runs)))
    return f" (excluded, gate failed: {', '.join(skipped)})" if skipped else ""


def test_criterion_1_canonical_form_fidelity(runs, capsys):
    errors = {
        k: float(np.abs(r.conjugate.lindblad.states - r.conjugate.exact.states).max())
        for k, r in converged_runs(runs).items()
    }
    ok = bool(errors) and all(e < FIDELITY_TOL for e in errors.values())
    report(capsys, 1, ok, f"Lindblad vs exact trajectory < {FIDELITY_TOL:g}: {_fmt(errors)}{_excluded(runs)}")
    assert ok


def test_criterion_2_measure_equivalence(runs, capsys):
    errors = {k: float(r.measures.equivalence_residual.max()) for k, r in converged_runs(runs).items()}
    ok = bool(errors) and all(e < EQUIVALENCE_TOL for e in errors.values())
    report(capsys, 2, ok, f"max |f - (d/2) g| < {EQUIVALENCE_TOL:g}: {_fmt(errors)}{_excluded(runs)}")
    assert ok


def test_criterion_3_algebraic_identities(runs, capsys):
    parts = []
    ok = bool(converged_runs(runs))
    for k, r in converged_runs(runs).items():
        a = r.analysis
        D = a.dissipator.D
        herm = np.abs(D - np.conj(np.transpose(D, (0, 2, 1)))).max()
        first_row = np.abs(a.generator.B[:, 0, :]).max()
        trB = np.trace(a.generator.B, axis1=1, axis2=2)
        trace_id = np.abs(trB + 2 * a.form.gammas.sum(axis=1)).max()
        volume = r.bloch.volume.residual
        worst = int(np.argmax(volume))
        checks = (
            herm < HERMITICITY_TOL, first_row < FIRST_ROW_TOL, trace_id < TRACE_IDENTITY_TOL,
            volume.max() < VOLUME_TOL,
        )
        ok = ok and all(checks)
        parts.append(
            f"{k} [D herm {herm:.1e}, B row0 {first_row:.1e}, TrB+2sum {trace_id:.1e}, "
            f"volume ODE {volume.max():.1e} at t={r.bloch.volume.t_grid[worst]:.2f}]"
        )
    report(capsys, 3, ok, "; ".join(parts) + _excluded(runs))
    assert ok


def _dephasing_rate(bath, t):
    """d/dt of the decay exponent Gamma(t) = 4 Re Q(t), integrated directly."""
    wc, beta = bath.omega_c, bath.beta

    def f(w):
        return np.exp(-w / wc) * np.sin(w * t) / np.tanh(0.5 * beta * w) if w > 0 else 0.0

    return 2 * bath.xi * quad(f, 0, 60 * wc, limit=5000, epsabs=1e-13)[0]


def test_criterion_4_dephasing_oracle(tmp_path, capsys):
    base = PRESETS["set1"]
    n = int(round(10 / DEPHASING_DT))
    cfg = replace(
        base, backend="dephasing", system=SystemConfig(0.0, 0.0), grid=GridConfig(DEPHASING_DT, n),
        outputs=OutputConfig(directory=str(tmp_path), tables=()),
    )
    pipeline.stage_simulate(cfg)
    form = pipeline.stage_convert(cfg).form
    _, bath = _physics(cfg)
    sel = np.nonzero(form.t_grid >= 0.1 - 1e-12)[0]
    rates = form.gammas[sel]
    k = np.argmax(np.abs(rates), axis=1)
    got = rates[np.arange(len(sel)), k]
    want = np.array([_dephasing_rate(bath, form.t_grid[i]) for i in sel])
    rel = np.abs(got - want) / np.abs(want)
    others = np.abs(np.where(np.arange(rates.shape[1]) == k[:, None], 0.0, rates)).max()
    ok = rel.max() < DEPHASING_REL_TOL
    report(
        capsys, 4, ok,
        f"dephasing rate vs quadrature oracle (dt={DEPHASING_DT:g}, t in [0.1, 10]) max rel "
        f"{rel.max():.2e} at t={form.t_grid[sel][np.argmax(rel)]:.3f} < {DEPHASING_REL_TOL:g}; other rates {others:.1e}",
    )
    assert ok


def test_criterion_5_limits(tmp_path, capsys):
    n = int(round(10 / LIMIT_DT))
    parts, ok = [], True
    for eps in (0.0, 1.0):
        cfg = RunConfig(
            name=f"xi0-eps{eps:g}", system=SystemConfig(1.0, eps), bath=BathConfig(0.0, 7.5, 5.0),
            grid=GridConfig(LIMIT_DT, n), quapi=QuapiConfig(kmax=1),
            outputs=OutputConfig(directory=str(tmp_path / f"eps{eps:g}"), tables=()),
        )
        pipeline.stage_simulate(cfg)
        form = pipeline.stage_convert(cfg).form
        H0 = np.array([[eps, 1.0], [1.0, -eps]])
        rate = np.abs(form.gammas).max()
        herr = np.abs(form.H - H0).max()
        ok = ok and rate < LIMIT_RATE_TOL and herr < LIMIT_H_TOL
        parts.append(f"eps={eps:g} max|gamma| {rate:.1e}, H error {herr:.1e}")
    identity = MapSeries(2, 0.05, np.repeat(np.eye(4, dtype=complex)[None], 201, axis=0))
    b0 = np.abs(analyze(identity).generator.B).max()
    ok = ok and b0 < STENCIL_ZERO_TOL
    parts.append(f"identity map max|B| {b0:.1e}")
    report(capsys, 5, ok, f"xi=0 at dt={LIMIT_DT:g}: " + "; ".join(parts))
    assert ok


def _extrema(x):
    s = np.sign(np.diff(x))
    return np.nonzero(s[1:] * s[:-1] < 0)[0] + 1


def test_criterion_6_set1_qualitative(runs, capsys):
    r = runs["set1"]
    if not r.converged:
        report(capsys, 6, False, "set1 excluded, gate failed")
        pytest.fail("set1 did not pass the convergence gate")
    gammas = r.analysis.form.gammas
    a = gammas.min() < 0
    trB = r.bloch.volume.trace_B
    detM = r.bloch.affine.detM
    b = trB.max() < 0 and np.diff(detM).max() < 0
    p_unclipped = r.conjugate.lindblad.states[-1, 0, 0].real
    p_clipped = r.conjugate.markov.states[-1, 0, 0].real
    c = abs(p_unclipped - 0.5) <= POPULATION_BAND and abs(p_clipped - 0.5) <= POPULATION_BAND

    x_u = r.conjugate.lindblad.states[:, 0, 1].imag
    x_c = r.conjugate.markov.states[:, 0, 1].imag
    e_u, e_c = _extrema(x_u), _extrema(x_c)
    m = min(len(e_u), len(e_c))
    amp_u = np.abs(np.diff(x_u[e_u[:m]]))
    amp_c = np.abs(np.diff(x_c[e_c[:m]]))
    d = m >= 2 and bool(np.all(amp_u > amp_c))

    ok = a and b and c and d
    report(
        capsys, 6, ok,
        f"set1 (a) min gamma {gammas.min():.3f} < 0 {'ok' if a else 'no'}; "
        f"(b) max Tr B {trB.max():.3f} < 0, det M decreasing {'ok' if b else 'no'}; "
        f"(c) p0(10) unclipped {p_unclipped:.4f}, clipped {p_clipped:.4f} in 0.5 +- {POPULATION_BAND:g} "
        f"{'ok' if c else 'no'}; (d) coherence swings {np.round(amp_u, 3).tolist()} > "
        f"{np.round(amp_c, 3).tolist()} {'ok' if d else 'no'}",
    )
    assert ok


def test_criterion_7_biased_sets_qualitative(runs, capsys):
    parts = []
    biased = {k: r for k, r in converged_runs(runs).items() if k in ("set2", "set3")}
    ok = bool(biased)
    for k, r in biased.items():
        shift = abs(r.conjugate.lindblad.states[-1, 0, 0].real - r.conjugate.markov.states[-1, 0, 0].real)
        cp = min(choi_min_eigenvalue(phi, 2) for phi in r.conjugate.markov_map.maps)
        ok = ok and shift > EQUILIBRIUM_SHIFT and cp >= CP_FLOOR
        parts.append(f"{k} |p_unclipped - p_clipped|(10) {shift:.2e} > {EQUILIBRIUM_SHIFT:g}, Choi min {cp:.1e}")
    report(capsys, 7, ok, "; ".join(parts) + _excluded(runs))
    assert ok

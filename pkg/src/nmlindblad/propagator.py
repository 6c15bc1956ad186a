"""Exact dynamical maps for the spin-boson model.

Three sources produce a :class:`MapSeries`: the influence-functional path
sum (:func:`quapi_map`), the closed pure-dephasing solution
(:func:`dephasing_map`), and text files written by :func:`save_map`.
"""
from __future__ import annotations

import logging
import math
import os
import tempfile
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import expm

from . import pathsum
from .bath import OhmicBath, dephasing_exponent, eta_table
from .errors import (
    DomainError,
    InvalidDimensionError,
    InvariantViolationError,
    MapFormatError,
)
from .superop import (
    choi_min_eigenvalue,
    hermiticity_deviation,
    sprepost,
    trace_deviation,
    unvec,
    vec,
)

log = logging.getLogger(__name__)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

TRACE_TOL = 1e-10
HERMITICITY_TOL = 1e-10
CP_TOL = 1e-8
CONVERGENCE_TOL = 5e-4
# |0><0|, the state whose dynamics is reported
REFERENCE_STATE = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)

__all__ = [
    "SystemSpec",
    "MapSeries",
    "MapDiagnostics",
    "CPWarning",
    "quapi_map",
    "convergence_gate",
    "refined_run",
    "compare_refined",
    "refined_kmax",
    "GateResult",
    "dephasing_map",
    "unitary_map",
    "apply_map",
    "diagnose",
    "validate_map_series",
    "save_map",
    "load_map",
]


class CPWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SystemSpec:
    """Two-level system H = omega sigma_x + eps sigma_z."""

    omega: float
    eps: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.omega) and math.isfinite(self.eps)):
            raise DomainError("system parameters must be finite")

    def hamiltonian(self):
        return self.omega * SIGMA_X + self.eps * SIGMA_Z


@dataclass(frozen=True, eq=False)
class MapSeries:
    """phi_{t_n} for t_n = n dt, as column-stacking d^2 x d^2 matrices."""

    dim: int
    dt: float
    maps: np.ndarray
    # set by quapi_map when the convergence gate was requested
    converged: bool | None = None
    convergence_error: float | None = None

    def __post_init__(self):
        d2 = self.dim * self.dim
        if self.maps.ndim != 3 or self.maps.shape[1:] != (d2, d2):
            raise InvalidDimensionError(
                f"maps must have shape (n+1, {d2}, {d2}), got {self.maps.shape}"
            )

    @property
    def n_steps(self) -> int:
        return self.maps.shape[0] - 1

    @property
    def t_grid(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def __len__(self):
        return self.maps.shape[0]

    def __getitem__(self, n):
        return self.maps[n]


@dataclass(frozen=True)
class MapDiagnostics:
    trace: float
    hermiticity: float
    choi_min: float
    worst_trace_index: int
    worst_hermiticity_index: int
    worst_choi_index: int


def diagnose(series: MapSeries) -> MapDiagnostics:
    d = series.dim
    tr = [trace_deviation(m, d) for m in series.maps]
    he = [hermiticity_deviation(m, d) for m in series.maps]
    cp = [choi_min_eigenvalue(m, d) for m in series.maps]
    return MapDiagnostics(
        trace=max(tr),
        hermiticity=max(he),
        choi_min=min(cp),
        worst_trace_index=int(np.argmax(tr)),
        worst_hermiticity_index=int(np.argmax(he)),
        worst_choi_index=int(np.argmin(cp)),
    )


def validate_map_series(series, trace_tol=TRACE_TOL, herm_tol=HERMITICITY_TOL, cp_tol=CP_TOL):
    """Raise on trace or Hermiticity violations, warn on CP violations."""
    diag = diagnose(series)
    if not np.allclose(series.maps[0], np.eye(series.dim**2), atol=trace_tol):
        raise InvariantViolationError(
            "identity at t = 0", float(np.max(np.abs(series.maps[0] - np.eye(series.dim**2)))), 0
        )
    if diag.trace > trace_tol:
        raise InvariantViolationError("trace preservation", diag.trace, diag.worst_trace_index)
    if diag.hermiticity > herm_tol:
        raise InvariantViolationError(
            "Hermiticity preservation", diag.hermiticity, diag.worst_hermiticity_index
        )
    if diag.choi_min < -cp_tol:
        warnings.warn(
            f"complete positivity violated at time index {diag.worst_choi_index}: "
            f"Choi minimum eigenvalue {diag.choi_min:.3e}",
            CPWarning,
            stacklevel=2,
        )
    return diag


def _symmetrize(maps):
    # Trace and Hermiticity preservation hold exactly for the path sum; the
    # compressed engine breaks them at the truncation level, so restore them
    # by projection (change is of order the SVD cutoff).
    d = 2
    perm = np.array([(p // d) + d * (p % d) for p in range(d * d)])
    maps = 0.5 * (maps + np.conj(maps)[:, perm][:, :, perm])
    w = vec(np.eye(d)).real
    defect = w @ maps - w  # (n+1, d*d)
    maps = maps - np.einsum("i,nj->nij", w, defect) / d
    return maps


def _path_sum(system, bath, dt, n_steps, kmax, svd_cutoff, max_bond, memory_budget):
    table = eta_table(bath, dt, n_steps, kmax)
    U = expm(-1j * system.hamiltonian() * dt)
    prop = sprepost(U, U.conj().T)
    if svd_cutoff is None:
        return pathsum.propagate_dense(prop, table, n_steps, table.kmax, memory_budget)
    maps, widest = pathsum.propagate_compressed(
        prop, table, n_steps, table.kmax, cutoff=svd_cutoff, max_bond=max_bond
    )
    log.info("compressed path sum: dt=%g kmax=%d widest bond %d", dt, table.kmax, widest)
    return _symmetrize(maps)


@dataclass(frozen=True, eq=False)
class GateResult:
    """Outcome of the refinement check of a path-sum run."""

    error: float  # max change of any element of the reference trajectory
    map_error: float  # max change of any map element
    tolerance: float
    reference: "MapSeries"

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def refined_kmax(kmax: int) -> int:
    """Memory length on the halved grid: the same memory time plus two steps."""
    return 2 * kmax + 2


def refined_run(
    series: "MapSeries",
    system: SystemSpec,
    bath: OhmicBath,
    kmax: int,
    *,
    svd_cutoff: float | None = None,
    max_bond: int | None = None,
    memory_budget: int = pathsum.DEFAULT_MEMORY_BUDGET,
) -> "MapSeries":
    """The path sum on the halved grid that :func:`convergence_gate` compares against."""
    n = series.n_steps
    maps = _path_sum(
        system, bath, 0.5 * series.dt, 2 * n, refined_kmax(min(kmax, n)), svd_cutoff, max_bond, memory_budget
    )
    return MapSeries(series.dim, 0.5 * series.dt, maps)


def compare_refined(series: "MapSeries", reference: "MapSeries", tolerance: float = CONVERGENCE_TOL, rho0=None):
    """Gate outcome of ``series`` against a run on the halved grid."""
    if reference.n_steps != 2 * series.n_steps or not math.isclose(2 * reference.dt, series.dt):
        raise DomainError("reference must cover the same times on the halved grid")
    rho0 = REFERENCE_STATE if rho0 is None else rho0
    v = vec(_check_density_matrix(rho0, series.dim))
    diff = reference.maps[::2] - series.maps
    error = float(np.abs(diff @ v).max())
    return GateResult(error, float(np.abs(diff).max()), tolerance, reference)


def convergence_gate(
    series: "MapSeries",
    system: SystemSpec,
    bath: OhmicBath,
    kmax: int,
    *,
    svd_cutoff: float | None = None,
    max_bond: int | None = None,
    memory_budget: int = pathsum.DEFAULT_MEMORY_BUDGET,
    tolerance: float = CONVERGENCE_TOL,
    rho0=None,
) -> GateResult:
    """Rerun with dt/2 and refined memory; compare on the coarse grid."""
    reference = refined_run(
        series, system, bath, kmax, svd_cutoff=svd_cutoff, max_bond=max_bond, memory_budget=memory_budget
    )
    return compare_refined(series, reference, tolerance, rho0)


def quapi_map(
    system: SystemSpec,
    bath: OhmicBath,
    dt: float,
    n_steps: int,
    kmax: int,
    *,
    svd_cutoff: float | None = None,
    max_bond: int | None = None,
    memory_budget: int = pathsum.DEFAULT_MEMORY_BUDGET,
    convergence_check: bool = False,
    convergence_tol: float = CONVERGENCE_TOL,
) -> MapSeries:
    """Influence-functional path sum with memory truncated at ``kmax`` steps.

    Forward and backward paths live in the sigma_z eigenbasis; the free
    propagator between path points is exp(-i H dt) and the bath couples to
    each point over a cell of width dt (half width at the two ends).  The
    map is assembled by propagating all four matrix units |i><j| at once.

    With ``svd_cutoff=None`` the window tensor is summed exactly and must
    fit ``memory_budget`` entries.  With a cutoff the tensor is kept in
    compressed form, which allows ``kmax`` up to ``n_steps``.

    ``convergence_check`` repeats the run at dt/2 (see
    :func:`convergence_gate`) and records the outcome on the result.
    """
    if dt <= 0:
        raise DomainError(f"time step must be > 0, got {dt}")
    if n_steps < 1:
        raise DomainError(f"n_steps must be >= 1, got {n_steps}")
    if kmax < 1:
        raise DomainError(f"kmax must be >= 1, got {kmax}")
    maps = _path_sum(system, bath, dt, n_steps, kmax, svd_cutoff, max_bond, memory_budget)
    series = MapSeries(2, float(dt), maps)
    if not convergence_check:
        return series
    gate = convergence_gate(
        series, system, bath, kmax,
        svd_cutoff=svd_cutoff, max_bond=max_bond, memory_budget=memory_budget, tolerance=convergence_tol,
    )
    if not gate.passed:
        log.warning("convergence gate failed: max RDM change %.3e >= %.1e", gate.error, convergence_tol)
    return replace(series, converged=gate.passed, convergence_error=gate.error)


def dephasing_map(bath: OhmicBath, eps: float, t_grid) -> MapSeries:
    """Pure dephasing (no tunneling): coherences pick up exp(-2i eps t - Gamma(t))."""
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 2 or t_grid[0] != 0:
        raise DomainError("time grid must be one-dimensional and start at 0")
    dt = t_grid[1] - t_grid[0]
    if not np.allclose(np.diff(t_grid), dt, rtol=1e-9, atol=1e-12):
        raise DomainError("time grid must be uniform")
    maps = np.zeros((t_grid.size, 4, 4), dtype=complex)
    for n, t in enumerate(t_grid):
        c = np.exp(-2j * eps * t - dephasing_exponent(bath, t))
        # vec order (00, 10, 01, 11): rho_10 -> conj(c), rho_01 -> c
        maps[n] = np.diag([1.0, np.conj(c), c, 1.0])
    return MapSeries(2, float(dt), maps)


def unitary_map(H, dt: float, n_steps: int) -> MapSeries:
    """Closed-system channel rho -> U rho U^dag with U = exp(-i H t)."""
    H = np.asarray(H, dtype=complex)
    d = H.shape[0]
    maps = np.empty((n_steps + 1, d * d, d * d), dtype=complex)
    for n in range(n_steps + 1):
        U = expm(-1j * H * n * dt)
        maps[n] = sprepost(U, U.conj().T)
    return MapSeries(d, float(dt), maps)


def _check_density_matrix(rho, d, tol=1e-10):
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (d, d):
        raise InvalidDimensionError(f"density matrix must be {d}x{d}, got {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise DomainError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise DomainError(f"density matrix trace is {np.trace(rho).real}, expected 1")
    if np.linalg.eigvalsh(rho)[0] < -tol:
        raise DomainError("density matrix is not positive semidefinite")
    return rho


def apply_map(series: MapSeries, rho0, n: int) -> np.ndarray:
    """phi_{t_n}(rho0)."""
    d = series.dim
    rho0 = _check_density_matrix(rho0, d)
    if not 0 <= n <= series.n_steps:
        raise IndexError(f"time index {n} outside 0..{series.n_steps}")
    return unvec(series.maps[n] @ vec(rho0), d)


def trajectory(series: MapSeries, rho0) -> np.ndarray:
    """phi_{t_n}(rho0) for every n, shape (n+1, d, d)."""
    d = series.dim
    rho0 = _check_density_matrix(rho0, d)
    out = series.maps @ vec(rho0)
    return out.reshape(-1, d, d).transpose(0, 2, 1)


HEADER_PREFIX = "MAPSERIES"


def save_map(series: MapSeries, path) -> None:
    """Write the line-oriented text format, atomically."""
    d = series.dim
    d2 = d * d
    lines = [f"{HEADER_PREFIX} d={d} dt={series.dt!r} n={series.n_steps} convention=colstack"]
    for n, m in enumerate(series.maps):
        lines.append(f"t={n}")
        for r in range(d2):
            for c in range(d2):
                z = m[r, c]
                lines.append(f"{r} {c} {z.real:.17g} {z.imag:.17g}")
    _atomic_write(path, "\n".join(lines) + "\n")


def _atomic_write(path, text):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_header(line):
    parts = line.split()
    if not parts or parts[0] != HEADER_PREFIX:
        raise MapFormatError(f"expected header starting with {HEADER_PREFIX}", 1)
    fields = {}
    for item in parts[1:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise MapFormatError(f"malformed header field {item!r}", 1)
        fields[key] = value
    for key in ("d", "dt", "n", "convention"):
        if key not in fields:
            raise MapFormatError(f"header is missing {key}=", 1)
    if fields["convention"] != "colstack":
        raise MapFormatError(f"unsupported convention {fields['convention']!r}", 1)
    try:
        return int(fields["d"]), float(fields["dt"]), int(fields["n"])
    except ValueError as exc:
        raise MapFormatError(f"bad header value: {exc}", 1) from None


def load_map(path, validate=True) -> MapSeries:
    """Read a map file; trace/Hermiticity violations raise, CP violations warn."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MapFormatError("empty file", 1)
    d, dt, n_steps = _parse_header(lines[0])
    d2 = d * d
    maps = np.zeros((n_steps + 1, d2, d2), dtype=complex)
    lineno = 1
    pos = 1
    for n in range(n_steps + 1):
        lineno = pos + 1
        if pos >= len(lines):
            raise MapFormatError(f"file ends before block t={n}", lineno)
        if lines[pos].strip() != f"t={n}":
            raise MapFormatError(f"expected 't={n}', got {lines[pos]!r}", lineno)
        pos += 1
        seen = np.zeros((d2, d2), dtype=bool)
        for _ in range(d2 * d2):
            lineno = pos + 1
            if pos >= len(lines):
                raise MapFormatError(f"file ends inside block t={n}", lineno)
            parts = lines[pos].split()
            pos += 1
            if len(parts) != 4:
                raise MapFormatError(f"expected '<row> <col> <re> <im>', got {lines[pos - 1]!r}", lineno)
            try:
                r, c = int(parts[0]), int(parts[1])
                re, im = float(parts[2]), float(parts[3])
            except ValueError:
                raise MapFormatError(f"unparseable entry {lines[pos - 1]!r}", lineno) from None
            if not (0 <= r < d2 and 0 <= c < d2):
                raise MapFormatError(f"index ({r}, {c}) out of range", lineno)
            if seen[r, c]:
                raise MapFormatError(f"duplicate entry ({r}, {c})", lineno)
            seen[r, c] = True
            maps[n, r, c] = complex(re, im)
    if any(line.strip() for line in lines[pos:]):
        raise MapFormatError("trailing content after last block", pos + 1)
    series = MapSeries(d, dt, maps)
    if validate:
        validate_map_series(series)
    return series

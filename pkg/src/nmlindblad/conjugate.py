"""Conjugate Markovian dynamics and integration of time-local master equations.

Clipping replaces every negative decay rate by zero while keeping H(t) and
the Lindblad operators, which leaves a generator with nonnegative rates.
Integration uses classical Runge-Kutta on a fixed substep with the
generator interpolated linearly between grid points.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvariantViolationError, NumericalToleranceError
from .lindblad import CanonicalForm, reconstruct_generator
from .propagator import MapSeries, _check_density_matrix, trajectory
from .superop import trace_deviation, vec

SUBSTEPS = 4
TRACE_DRIFT_LIMIT = 1e-6
TRACE_TOL = 1e-8
HERMITICITY_TOL = 1e-10
POSITIVITY_TOL = 1e-6

EXACT = "exact-map"
RECONSTRUCTED = "lindblad-reconstructed"
CONJUGATE = "markovian-conjugate"
PROVENANCES = (EXACT, RECONSTRUCTED, CONJUGATE)

__all__ = [
    "Trajectory",
    "clip_rates",
    "generator_series",
    "propagate_state",
    "propagate_map",
    "exact_trajectory",
    "validate_trajectory",
    "PROVENANCES",
]


@dataclass(frozen=True, eq=False)
class Trajectory:
    t_grid: np.ndarray
    states: np.ndarray  # (n+1, d, d)
    provenance: str
    trace_drift: float = 0.0

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def populations(self) -> np.ndarray:
        return np.einsum("nii->ni", self.states).real


def validate_trajectory(traj: Trajectory) -> None:
    states = traj.states
    tr = np.abs(np.einsum("nii->n", states) - 1.0)
    if tr.max() > TRACE_TOL:
        raise InvariantViolationError("unit trace", float(tr.max()), int(np.argmax(tr)))
    herm = np.abs(states - np.conj(np.swapaxes(states, 1, 2))).max(axis=(1, 2))
    if herm.max() > HERMITICITY_TOL:
        raise InvariantViolationError("Hermiticity", float(herm.max()), int(np.argmax(herm)))
    sym = 0.5 * (states + np.conj(np.swapaxes(states, 1, 2)))
    low = np.linalg.eigvalsh(sym)[:, 0]
    if low.min() < -POSITIVITY_TOL:
        raise InvariantViolationError("positivity", float(-low.min()), int(np.argmin(low)))


def clip_rates(form: CanonicalForm) -> CanonicalForm:
    """Copy of ``form`` with gamma_k(t) replaced by max(gamma_k(t), 0)."""
    gammas = np.maximum(form.gammas, 0.0)
    gammas.setflags(write=False)
    return replace(form, gammas=gammas, clipped=True)


def generator_series(form: CanonicalForm) -> np.ndarray:
    """Superoperator of Lambda_{t_n} for every grid point."""
    return np.array([reconstruct_generator(form, n) for n in range(form.n_steps + 1)])


def _integrate(gens, dt, Y0, substeps=SUBSTEPS):
    """RK4 for dY/dt = Lambda(t) Y on each grid interval, returns Y at grid points."""
    h = dt / substeps
    out = np.empty((len(gens),) + Y0.shape, dtype=complex)
    out[0] = Y = Y0.astype(complex)
    for n in range(len(gens) - 1):
        L0, dL = gens[n], gens[n + 1] - gens[n]
        for s in range(substeps):
            La = L0 + (s / substeps) * dL
            Lm = L0 + ((s + 0.5) / substeps) * dL
            Lb = L0 + ((s + 1) / substeps) * dL
            k1 = La @ Y
            k2 = Lm @ (Y + 0.5 * h * k1)
            k3 = Lm @ (Y + 0.5 * h * k2)
            k4 = Lb @ (Y + h * k3)
            Y = Y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[n + 1] = Y
    return out


def _dt(form):
    return float(form.t_grid[1] - form.t_grid[0])


def _provenance(form):
    return CONJUGATE if form.clipped else RECONSTRUCTED


def propagate_state(form: CanonicalForm, rho0) -> Trajectory:
    """Integrate rho' = Lambda_t rho from rho0; no renormalization."""
    d = form.dim
    rho0 = _check_density_matrix(rho0, d)
    y = _integrate(generator_series(form), _dt(form), vec(rho0))
    states = y.reshape(-1, d, d).transpose(0, 2, 1)
    drift = float(np.abs(np.einsum("nii->n", states) - 1.0).max())
    if drift > TRACE_DRIFT_LIMIT:
        raise NumericalToleranceError("trace drift during integration", achieved=drift)
    return Trajectory(form.t_grid, states, _provenance(form), drift)


def propagate_map(form: CanonicalForm) -> MapSeries:
    """Integrate Phi' = Lambda_t Phi with Phi(0) = identity."""
    d = form.dim
    maps = _integrate(generator_series(form), _dt(form), np.eye(d * d))
    drift = max(trace_deviation(m, d) for m in maps)
    if drift > TRACE_DRIFT_LIMIT:
        raise NumericalToleranceError("trace drift during map integration", achieved=drift)
    return MapSeries(d, _dt(form), maps)


def exact_trajectory(series: MapSeries, rho0) -> Trajectory:
    return Trajectory(series.t_grid, trajectory(series, rho0), EXACT)

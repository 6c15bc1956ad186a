"""Non-Markovianity measures from the canonical form.

f(t) sums the magnitudes of the negative decay rates.  g(t) is the
first-order growth of the trace norm of the maximally entangled state
under one infinitesimal step of the generator,

    g(t) = lim_{e -> 0} (|| |Phi><Phi| + e K ||_1 - 1) / e,
    K    = (Lambda_t x id)(|Phi><Phi|),

which vanishes exactly when every rate is nonnegative.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NumericalToleranceError
from .lindblad import CanonicalForm, reconstruct_generator
from .superop import choi_state

EPSILONS = (1e-5, 1e-6)
AGREEMENT_WARN = 1e-4
AGREEMENT_FAIL = 1e-2
# the two estimates differ by O(e ||K||^2) even when g = 0, so their spread
# is measured relative to max(|g|, ||K||_1) rather than |g| alone
G_FLOOR = 1e-12

__all__ = [
    "MeasureSeries",
    "AccuracyWarning",
    "decay_rate_measure",
    "rhp_measure",
    "rhp_perturbative",
    "trace_norm",
    "measure_series",
]


class AccuracyWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class MeasureSeries:
    t_grid: np.ndarray
    f_k: np.ndarray  # (n+1, N-1)
    f: np.ndarray
    index: np.ndarray
    g: np.ndarray | None = None

    @property
    def equivalence_residual(self) -> np.ndarray:
        """|f - (d/2) g| per step; d is recovered from the channel count."""
        if self.g is None:
            raise ValueError("RHP measure was not computed")
        d = int(round(np.sqrt(self.f_k.shape[1] + 1)))
        return np.abs(self.f - 0.5 * d * self.g)


def decay_rate_measure(form: CanonicalForm) -> MeasureSeries:
    f_k = np.maximum(0.0, -form.gammas)
    return MeasureSeries(
        t_grid=form.t_grid,
        f_k=f_k,
        f=f_k.sum(axis=1),
        index=np.count_nonzero(form.gammas < 0, axis=1),
    )


def trace_norm(X) -> float:
    return float(np.linalg.svd(X, compute_uv=False).sum())


def _max_entangled_projector(d):
    return choi_state(np.eye(d * d), d)


def _rhp_step(K, P):
    est = [(trace_norm(P + e * K) - 1.0) / e for e in EPSILONS]
    (e1, g1), (e2, g2) = zip(EPSILONS, est)
    g0 = g2 - e2 * (g1 - g2) / (e1 - e2)
    spread = abs(g1 - g2) / max(abs(g1), abs(g2), trace_norm(K), G_FLOOR)
    return g0, spread


def rhp_measure(form: CanonicalForm) -> np.ndarray:
    """g(t_n) by two-point extrapolation in the perturbation strength."""
    d = form.dim
    P = _max_entangled_projector(d)
    g = np.empty(form.n_steps + 1)
    worst, worst_n = 0.0, 0
    for n in range(form.n_steps + 1):
        K = choi_state(reconstruct_generator(form, n), d)
        g[n], spread = _rhp_step(K, P)
        if spread > worst:
            worst, worst_n = spread, n
    if worst > AGREEMENT_FAIL:
        raise NumericalToleranceError(
            f"RHP estimates at the two perturbation strengths disagree at time index {worst_n}",
            achieved=worst,
        )
    if worst > AGREEMENT_WARN:
        warnings.warn(
            f"RHP estimates disagree by {worst:.2e} (relative) at time index {worst_n}",
            AccuracyWarning,
            stacklevel=2,
        )
    return g


def rhp_perturbative(form: CanonicalForm, n: int) -> float:
    """Twice the summed magnitude of the negative eigenvalues of K on the
    orthogonal complement of |Phi>."""
    d = form.dim
    P = _max_entangled_projector(d)
    Q = np.eye(d * d) - P
    K = choi_state(reconstruct_generator(form, n), d)
    QKQ = Q @ K @ Q
    lam = np.linalg.eigvalsh(0.5 * (QKQ + QKQ.conj().T))
    return float(-2.0 * lam[lam < 0].sum()) + 0.0


def measure_series(form: CanonicalForm) -> MeasureSeries:
    m = decay_rate_measure(form)
    return MeasureSeries(m.t_grid, m.f_k, m.f, m.index, rhp_measure(form))

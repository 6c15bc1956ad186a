"""Qubit channels as affine maps of the Bloch ball, r -> M r + C."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import HermitianBasis, build_basis
from .errors import InvalidDimensionError
from .lindblad import GeneratorSeries, _grid_step, time_derivative, transfer_matrix
from .propagator import SIGMA_X, SIGMA_Y, SIGMA_Z, MapSeries
from .superop import unvec, vec

PAULIS = np.array([SIGMA_X, SIGMA_Y, SIGMA_Z])
SINGULAR_TOL = 1e-12

__all__ = [
    "AffineSeries",
    "VolumeReport",
    "affine_decomposition",
    "polar_decompose",
    "volume_check",
    "bloch_vector",
    "bloch_state",
]


def bloch_vector(rho) -> np.ndarray:
    return np.einsum("kij,ji->k", PAULIS, np.asarray(rho)).real


def bloch_state(r) -> np.ndarray:
    return 0.5 * (np.eye(2) + np.einsum("k,kij->ij", np.asarray(r, dtype=float), PAULIS))


@dataclass(frozen=True, eq=False)
class AffineSeries:
    t_grid: np.ndarray
    M: np.ndarray  # (n+1, 3, 3)
    C: np.ndarray  # (n+1, 3)
    O: np.ndarray
    S: np.ndarray
    detM: np.ndarray
    reflection: np.ndarray  # True where det O = -1

    def ellipsoid_axes(self, n: int):
        """Semi-axis lengths and directions (columns) of the image of the unit ball."""
        w, V = np.linalg.eigh(self.S[n])
        return w, self.O[n] @ V


def polar_decompose(M):
    """M = O S with S = (M^T M)^(1/2) and O orthogonal.

    Both factors come from the SVD M = W diag(s) V^T, which avoids squaring
    the condition number.  On the null space of S, O is completed by the
    orthogonal map closest to the identity.  Returns (O, S, reflection)
    where reflection is det O < 0.
    """
    M = np.asarray(M, dtype=float)
    W, s, Vt = np.linalg.svd(M)
    V = Vt.T
    S = (V * s) @ Vt
    S = 0.5 * (S + S.T)
    live = s > SINGULAR_TOL * max(1.0, s[0])
    O = W[:, live] @ Vt[live]
    if not live.all():
        Z, W0 = V[:, ~live], W[:, ~live]
        # maximize Tr[W0 R Z^T] over orthogonal R (orthogonal Procrustes)
        P, _, Qt = np.linalg.svd(Z.T @ W0)
        O = O + W0 @ (Qt.T @ P.T) @ Z.T
    return O, S, bool(np.linalg.det(O) < 0)


def affine_decomposition(series: MapSeries, basis: HermitianBasis | None = None) -> AffineSeries:
    if series.dim != 2:
        raise InvalidDimensionError(f"Bloch decomposition needs d = 2, got d = {series.dim}")
    basis = basis or build_basis(2)
    F = transfer_matrix(series, basis).F
    M = np.ascontiguousarray(F[:, 1:, 1:])
    image = series.maps @ vec(np.eye(2))
    C = np.array([0.5 * np.einsum("kij,ji->k", PAULIS, unvec(v, 2)).real for v in image])
    O = np.empty_like(M)
    S = np.empty_like(M)
    refl = np.zeros(len(M), dtype=bool)
    for n, m in enumerate(M):
        O[n], S[n], refl[n] = polar_decompose(m)
    return AffineSeries(series.t_grid, M, C, O, S, np.linalg.det(M), refl)


@dataclass(frozen=True, eq=False)
class VolumeReport:
    t_grid: np.ndarray
    residual: np.ndarray
    detM: np.ndarray
    trace_B: np.ndarray

    @property
    def trace_sign(self) -> np.ndarray:
        return np.sign(self.trace_B)

    @property
    def max_residual(self) -> float:
        return float(self.residual.max())


def volume_check(affine: AffineSeries, B: GeneratorSeries) -> VolumeReport:
    """Residual of d(det M)/dt = Tr[B] det M with the generator's stencil."""
    if len(affine.t_grid) != len(B.t_grid) or not np.allclose(affine.t_grid, B.t_grid):
        raise ValueError("affine and generator series are on different grids")
    dt = _grid_step(affine.t_grid)
    trB = np.trace(B.B, axis1=1, axis2=2)
    rate = time_derivative(affine.detM, dt)
    return VolumeReport(affine.t_grid, np.abs(rate - trB * affine.detM), affine.detM, trB)

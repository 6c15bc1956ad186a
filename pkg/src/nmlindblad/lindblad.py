"""Canonical (time-dependent) Lindblad form of a dynamical map series.

The chain is F -> B -> D -> (H, gamma_k, L_k):

    F_kl(t) = Tr[G_k phi_t(G_l)]
    B(t)    = dF/dt F^-1
    D_ij(t) = sum_kl B_kl(t) Tr[G_l G_i G_k G_j]

so that Lambda_t(rho) = sum_ij D_ij G_i rho G_j.  The decoherence block
D_ij (i, j >= 1) is diagonalized into decay rates and Lindblad operators.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .basis import HermitianBasis, build_basis, trace_tensor
from .errors import (
    ConsistencyError,
    DomainError,
    IllConditionedError,
    InvalidDimensionError,
    InvariantViolationError,
)
from .propagator import MapSeries
from .superop import spost, spre, sprepost, vec

log = logging.getLogger(__name__)

IMAG_TOL = 1e-10
IMAG_DISCARD_TOL = 1e-12
FIRST_ROW_TOL = 1e-8
DISSIPATOR_HERMITICITY_TOL = 1e-8
REASSEMBLY_TOL = 1e-10
CONDITION_LIMIT = 1e12
TIE_TOL = 1e-9

__all__ = [
    "TransferSeries",
    "GeneratorSeries",
    "DissipatorSeries",
    "CanonicalForm",
    "LindbladAnalysis",
    "basis_matrix",
    "transfer_matrix",
    "time_derivative",
    "generator",
    "dissipator_matrix",
    "extract_hamiltonian",
    "canonical_form",
    "reconstruct_generator",
    "superop_from_dissipator",
    "analyze",
]


@dataclass(frozen=True, eq=False)
class TransferSeries:
    t_grid: np.ndarray
    F: np.ndarray  # (n+1, N, N) real

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.F.shape[1])))


@dataclass(frozen=True, eq=False)
class GeneratorSeries:
    t_grid: np.ndarray
    B: np.ndarray  # (n+1, N, N) real
    condition: np.ndarray  # condition number of F at each step

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.B.shape[1])))


@dataclass(frozen=True, eq=False)
class DissipatorSeries:
    t_grid: np.ndarray
    D: np.ndarray  # (n+1, N, N) complex Hermitian

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.D.shape[1])))

    def hermiticity_deviation(self) -> np.ndarray:
        return np.abs(self.D - np.conj(np.swapaxes(self.D, 1, 2))).max(axis=(1, 2))


@dataclass(frozen=True, eq=False)
class CanonicalForm:
    t_grid: np.ndarray
    H: np.ndarray  # (n+1, d, d)
    gammas: np.ndarray  # (n+1, N-1)
    lindblad_ops: np.ndarray  # (n+1, N-1, d, d)
    unitary_tracks: np.ndarray  # (n+1, N-1, N-1), columns are eigenvectors
    clipped: bool = False

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    @property
    def n_steps(self) -> int:
        return len(self.t_grid) - 1


def basis_matrix(basis: HermitianBasis) -> np.ndarray:
    """Columns vec(G_l); unitary because the basis is orthonormal."""
    return np.stack([vec(g) for g in basis.ops], axis=1)


def _check_basis(dim, basis):
    if basis is None:
        return build_basis(dim)
    if basis.dim != dim:
        raise InvalidDimensionError(f"basis dimension {basis.dim} does not match map dimension {dim}")
    return basis


def transfer_matrix(series: MapSeries, basis: HermitianBasis | None = None) -> TransferSeries:
    """F_kl(t_n) = Tr[G_k phi_n(G_l)] at every grid point."""
    basis = _check_basis(series.dim, basis)
    V = basis_matrix(basis)
    # Tr[G_k X] = vec(G_k)^dag vec(X) for Hermitian G_k
    F = np.einsum("ak,nab,bl->nkl", V.conj(), series.maps, V)
    imag = np.abs(F.imag).max(axis=(1, 2))
    worst = int(np.argmax(imag))
    if imag[worst] > IMAG_TOL:
        raise InvariantViolationError("Hermiticity preservation (imaginary transfer matrix)", imag[worst], worst)
    if imag[worst] > IMAG_DISCARD_TOL:
        log.debug("discarding imaginary residue %.2e of F", imag[worst])
    F = np.ascontiguousarray(F.real)
    N = basis.size
    dev0 = np.abs(F[0] - np.eye(N)).max()
    if dev0 > FIRST_ROW_TOL:
        raise InvariantViolationError("F(0) = identity", dev0, 0)
    row = np.abs(F[:, 0, :] - np.eye(N)[0]).max(axis=1)
    worst = int(np.argmax(row))
    if row[worst] > FIRST_ROW_TOL:
        raise InvariantViolationError("trace preservation (first row of F)", row[worst], worst)
    # cond(F) reaches 1e8 for strongly damped maps and would amplify the
    # rounding residue of this row into the first row of B
    F[:, 0, :] = np.eye(N)[0]
    F.setflags(write=False)
    return TransferSeries(series.t_grid, F)


def time_derivative(Y, dt: float) -> np.ndarray:
    """d/dt along axis 0 of samples on a uniform grid.

    Five-point central stencil in the interior, five-point off-centre
    stencils one point in from each end, and three-point one-sided
    stencils at the two endpoints.
    """
    Y = np.asarray(Y)
    n = Y.shape[0]
    if n < 5:
        raise DomainError(f"derivative stencil needs at least 5 grid points, got {n}")
    out = np.empty_like(Y)
    out[2:-2] = (Y[:-4] - 8 * Y[1:-3] + 8 * Y[3:-1] - Y[4:]) / (12 * dt)
    out[1] = (-3 * Y[0] - 10 * Y[1] + 18 * Y[2] - 6 * Y[3] + Y[4]) / (12 * dt)
    out[-2] = (3 * Y[-1] + 10 * Y[-2] - 18 * Y[-3] + 6 * Y[-4] - Y[-5]) / (12 * dt)
    out[0] = (-3 * Y[0] + 4 * Y[1] - Y[2]) / (2 * dt)
    out[-1] = (3 * Y[-1] - 4 * Y[-2] + Y[-3]) / (2 * dt)
    return out


def _grid_step(t_grid):
    t_grid = np.asarray(t_grid, dtype=float)
    steps = np.diff(t_grid)
    dt = float(steps.mean())
    if np.abs(steps - dt).max() > 1e-9 * max(1.0, abs(dt)):
        raise DomainError("time grid must be uniform")
    return dt


def generator(F: TransferSeries, condition_limit: float = CONDITION_LIMIT) -> GeneratorSeries:
    """B(t) = dF/dt F^-1 by a linear solve at every grid point."""
    dt = _grid_step(F.t_grid)
    Fdot = time_derivative(F.F, dt)
    B = np.empty_like(F.F)
    cond = np.linalg.cond(F.F)
    for n, (Fn, Dn) in enumerate(zip(F.F, Fdot)):
        if not np.isfinite(cond[n]) or cond[n] > condition_limit:
            raise IllConditionedError(n, float(cond[n]))
        # B F = Fdot  <=>  F^T B^T = Fdot^T
        B[n] = np.linalg.solve(Fn.T, Dn.T).T
    row = np.abs(B[:, 0, :]).max(axis=1)
    worst = int(np.argmax(row))
    if row[worst] > FIRST_ROW_TOL:
        raise InvariantViolationError("trace preservation (first row of B)", row[worst], worst)
    B.setflags(write=False)
    return GeneratorSeries(F.t_grid, B, cond)


def dissipator_matrix(B: GeneratorSeries, basis: HermitianBasis | None = None) -> DissipatorSeries:
    """D_ij = sum_kl B_kl Tr[G_l G_i G_k G_j]."""
    basis = _check_basis(B.dim, basis)
    T = trace_tensor(basis)
    D = np.einsum("nkl,likj->nij", B.B, T)
    out = DissipatorSeries(B.t_grid, D)
    dev = out.hermiticity_deviation()
    worst = int(np.argmax(dev))
    if dev[worst] > DISSIPATOR_HERMITICITY_TOL:
        raise ConsistencyError(f"D is not Hermitian at time index {worst}: deviation {dev[worst]:.3e}")
    D.setflags(write=False)
    return out


def extract_hamiltonian(D: DissipatorSeries, basis: HermitianBasis | None = None) -> np.ndarray:
    """H(t) = (i/2)(A - A^dag) with A = D_00/(2d) I + sum_i D_i0/sqrt(d) G_i."""
    basis = _check_basis(D.dim, basis)
    d = basis.dim
    A = 0.5 * D.D[:, 0, 0, None, None] / d * np.eye(d)
    A = A + np.einsum("ni,iab->nab", D.D[:, 1:, 0], basis.ops[1:]) / np.sqrt(d)
    H = 0.5j * (A - np.conj(np.swapaxes(A, 1, 2)))
    # exactly Hermitian up to the rounding of the subtraction above
    return 0.5 * (H + np.conj(np.swapaxes(H, 1, 2)))


def _fix_phase(U):
    idx = np.argmax(np.abs(U), axis=0)
    lead = U[idx, np.arange(U.shape[1])]
    return U * (np.abs(lead) / lead)[None, :]


def _match(U_prev, g_prev, U, g, step):
    """Permutation perm with column perm[k] of U continuing column k of U_prev."""
    overlap = np.abs(U_prev.conj().T @ U)
    m = overlap.shape[0]
    perm = np.full(m, -1)
    free_old = set(range(m))
    free_new = set(range(m))
    while free_old:
        rows = sorted(free_old)
        cols = sorted(free_new)
        sub = overlap[np.ix_(rows, cols)]
        best = sub.max()
        cand = [(rows[a], cols[b]) for a, b in zip(*np.nonzero(sub >= best - TIE_TOL))]
        if len(cand) > 1:
            log.debug("eigenvector overlap tie at step %d among %d pairs", step, len(cand))
            cand.sort(key=lambda kj: (abs(g[kj[1]] - g_prev[kj[0]]), kj))
        k, j = cand[0]
        perm[k] = j
        free_old.discard(k)
        free_new.discard(j)
    return perm


def canonical_form(D: DissipatorSeries, H, basis: HermitianBasis | None = None) -> CanonicalForm:
    """Diagonalize the decoherence block with eigenvectors tracked in time."""
    basis = _check_basis(D.dim, basis)
    block = D.D[:, 1:, 1:]
    block = 0.5 * (block + np.conj(np.swapaxes(block, 1, 2)))
    n_t, m = block.shape[0], block.shape[1]
    gammas = np.empty((n_t, m))
    tracks = np.empty((n_t, m, m), dtype=complex)
    for n in range(n_t):
        g, U = np.linalg.eigh(block[n])
        U = _fix_phase(U)
        # the first step is matched against the basis itself
        prev_U, prev_g = (tracks[n - 1], gammas[n - 1]) if n > 0 else (np.eye(m), g)
        perm = _match(prev_U, prev_g, U, g, n)
        g, U = g[perm], U[:, perm]
        gammas[n] = g
        tracks[n] = U
    rebuilt = np.einsum("nik,nk,njk->nij", tracks, gammas, tracks.conj())
    dev = np.abs(rebuilt - D.D[:, 1:, 1:]).max(axis=(1, 2))
    worst = int(np.argmax(dev))
    if dev[worst] > REASSEMBLY_TOL * max(1.0, np.abs(block[worst]).max()):
        raise ConsistencyError(f"eigendecomposition does not reassemble D at step {worst}: {dev[worst]:.3e}")
    ops = np.einsum("nik,iab->nkab", tracks, basis.ops[1:])
    H = np.asarray(H)
    for a in (H, gammas, ops, tracks):
        a.setflags(write=False)
    return CanonicalForm(D.t_grid, H, gammas, ops, tracks)


def reconstruct_generator(form: CanonicalForm, n: int) -> np.ndarray:
    """Superoperator of Lambda_{t_n} built from H, gamma_k and L_k."""
    if not 0 <= n <= form.n_steps:
        raise IndexError(f"time index {n} outside grid 0..{form.n_steps}")
    H = form.H[n]
    out = -1j * (spre(H) - spost(H))
    for g, L in zip(form.gammas[n], form.lindblad_ops[n]):
        LdL = L.conj().T @ L
        out = out + g * (sprepost(L, L.conj().T) - 0.5 * spre(LdL) - 0.5 * spost(LdL))
    return out


def superop_from_dissipator(D: np.ndarray, basis: HermitianBasis) -> np.ndarray:
    """Superoperator of rho -> sum_ij D_ij G_i rho G_j for one time step."""
    return sum(
        D[i, j] * sprepost(basis.ops[i], basis.ops[j])
        for i in range(basis.size)
        for j in range(basis.size)
    )


@dataclass(frozen=True, eq=False)
class LindbladAnalysis:
    transfer: TransferSeries
    generator: GeneratorSeries
    dissipator: DissipatorSeries
    form: CanonicalForm


def analyze(series: MapSeries, basis: HermitianBasis | None = None) -> LindbladAnalysis:
    """Run the whole chain from a map series to its canonical form."""
    basis = _check_basis(series.dim, basis)
    F = transfer_matrix(series, basis)
    B = generator(F)
    D = dissipator_matrix(B, basis)
    form = canonical_form(D, extract_hamiltonian(D, basis), basis)
    return LindbladAnalysis(F, B, D, form)

"""Orthonormal Hermitian operator bases (generalized Gell-Mann matrices).

Ordering is fixed: the normalized identity first, then the symmetric
off-diagonal operators, the antisymmetric ones, and finally the traceless
diagonal operators.  Index pairs (i, j) with i < j run lexicographically.
For d = 2 this gives exactly (I, sigma_x, sigma_y, sigma_z) / sqrt(2).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from .errors import InvalidDimensionError

__all__ = ["HermitianBasis", "build_basis", "expand", "reconstruct", "trace_tensor"]


@dataclass(frozen=True, eq=False)
class HermitianBasis:
    dim: int
    ops: np.ndarray  # shape (d*d, d, d)

    @property
    def size(self) -> int:
        return self.ops.shape[0]

    def __len__(self):
        return self.size

    def __getitem__(self, m):
        return self.ops[m]

    def gram(self) -> np.ndarray:
        return np.einsum("mij,nji->mn", self.ops, self.ops)


def build_basis(d: int) -> HermitianBasis:
    """Generalized Gell-Mann basis with Tr[G_m G_n] = delta_mn."""
    if int(d) != d or d < 2:
        raise InvalidDimensionError(f"basis dimension must be an integer >= 2, got {d!r}")
    return _cached_basis(int(d))


@lru_cache(maxsize=None)
def _cached_basis(d: int) -> HermitianBasis:
    ops = [np.eye(d, dtype=complex) / np.sqrt(d)]
    pairs = list(combinations(range(d), 2))
    for i, j in pairs:
        g = np.zeros((d, d), dtype=complex)
        g[i, j] = g[j, i] = 1 / np.sqrt(2)
        ops.append(g)
    for i, j in pairs:
        g = np.zeros((d, d), dtype=complex)
        g[i, j] = -1j / np.sqrt(2)
        g[j, i] = 1j / np.sqrt(2)
        ops.append(g)
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1.0
        diag[l] = -l
        ops.append(np.diag(diag / np.sqrt(l * (l + 1))).astype(complex))
    ops = np.array(ops)
    ops.setflags(write=False)
    return HermitianBasis(d, ops)


def _check_dim(X, basis):
    X = np.asarray(X)
    if X.shape != (basis.dim, basis.dim):
        raise InvalidDimensionError(
            f"operator of shape {X.shape} does not match basis dimension {basis.dim}"
        )
    return X


def expand(X, basis: HermitianBasis) -> np.ndarray:
    """Coefficients c_m = Tr[G_m X]; real iff X is Hermitian."""
    X = _check_dim(X, basis)
    return np.einsum("mij,ji->m", basis.ops, X)


def reconstruct(coeffs, basis: HermitianBasis) -> np.ndarray:
    coeffs = np.asarray(coeffs)
    if coeffs.shape != (basis.size,):
        raise InvalidDimensionError(
            f"expected {basis.size} coefficients, got shape {coeffs.shape}"
        )
    return np.einsum("m,mij->ij", coeffs, basis.ops)


@lru_cache(maxsize=None)
def _trace_tensor(d: int) -> np.ndarray:
    G = _cached_basis(d).ops
    # T[l, i, k, j] = Tr[G_l G_i G_k G_j]
    T = np.einsum("lab,ibc,kcd,jda->likj", G, G, G, G, optimize=True)
    T.setflags(write=False)
    return T


def trace_tensor(basis: HermitianBasis) -> np.ndarray:
    """Cached rank-4 tensor Tr[G_l G_i G_k G_j], indexed [l, i, k, j]."""
    return _trace_tensor(basis.dim)

"""Iterative propagation of the discretized path sum for sigma_z coupling.

A forward/backward path point is the pair index p = i + 2 j (ket index i,
bra index j), matching the column-stacking vectorization, with sigma_z
eigenvalue +1 for i = 0 and -1 for i = 1.  The pair (k, k') of path points
contributes the factor

    exp(-(s+_k - s-_k) (eta s+_k' - eta* s-_k'))

which depends on p_k only through ds_k = s+_k - s-_k in {0, +2, -2}.

Two engines share this discretization.  ``propagate_dense`` keeps the full
tensor over the memory window (4**kmax entries).  ``propagate_compressed``
stores the same tensor as a matrix product state and truncates singular
values below a relative cutoff after every step, which makes memory
windows of hundreds of steps affordable.  With a zero cutoff both agree to
rounding.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.linalg

from .errors import MemoryBudgetError, NumericalToleranceError

log = logging.getLogger(__name__)

_S = np.array([1.0, -1.0])
S_PLUS = _S[np.arange(4) % 2]
S_MINUS = _S[np.arange(4) // 2]
_DS_CLASSES = np.array([0.0, 2.0, -2.0])
# class of each pair index: 0 for ds = 0, 1 for ds = +2, 2 for ds = -2
PAIR_CLASS = np.where(S_PLUS == S_MINUS, 0, np.where(S_PLUS > S_MINUS, 1, 2))

DEFAULT_MEMORY_BUDGET = 2**22


def influence_classes(eta):
    """Factor table [class of p_k, p_k'] for coupling coefficient ``eta``."""
    return np.exp(-np.outer(_DS_CLASSES, eta * S_PLUS - np.conj(eta) * S_MINUS))


def influence_pairs(eta):
    """Factor table [p_k, p_k']."""
    return influence_classes(eta)[PAIR_CLASS]


def _self_factor(eta):
    return influence_pairs(eta)[np.arange(4), np.arange(4)]


def _bulk(table, k, kp):
    return table.lookup(k, kp, k + 1)


def _end(table, k, kp):
    return table.lookup(k, kp, k)


def propagate_dense(prop, table, n_steps, kmax, memory_budget=DEFAULT_MEMORY_BUDGET):
    """Exact sum over the memory window; returns maps of shape (n+1, 4, 4).

    ``prop`` is the 4x4 free-propagator superoperator [p_{k+1}, p_k].
    """
    kmax = min(kmax, n_steps)
    need = 4 * 4 ** (kmax + 1)
    if need > memory_budget:
        raise MemoryBudgetError(
            f"dense path tensor needs {need} entries for kmax={kmax}, "
            f"budget is {memory_budget}; use a compressed propagation or smaller kmax"
        )
    maps = np.zeros((n_steps + 1, 4, 4), dtype=complex)
    maps[0] = np.eye(4)
    # axis 0 carries the initial pair index, the rest are window points
    A = np.diag(_self_factor(table.lookup(0, 0, 1))).astype(complex)
    window = [0]
    for n in range(1, n_steps + 1):
        m = len(window)
        ext = A[..., :, None] * prop.T.reshape((1,) * m + (4, 4))
        corr = np.ones((1,) * (m + 1) + (4,), dtype=complex)
        for ax, k in enumerate(window, start=1):
            shape = [1] * (m + 2)
            shape[ax] = 4
            shape[-1] = 4
            eb = _bulk(table, n, k)
            ext = ext * influence_pairs(eb).T.reshape(shape)
            corr = corr * influence_pairs(_end(table, n, k) - eb).T.reshape(shape)
        sb = _bulk(table, n, n)
        ext = ext * _self_factor(sb)
        corr = corr * _self_factor(_end(table, n, n) - sb)
        rho = (ext * corr).reshape(4, -1, 4).sum(axis=1)
        maps[n] = rho.T
        window.append(n)
        if len(window) > kmax:
            ext = ext.sum(axis=1)
            window.pop(0)
        A = ext
    return maps


def _svd(theta):
    """Thin SVD; falls back to the QR-iteration driver when divide-and-conquer
    fails to converge, which LAPACK's gesdd does on some finite inputs."""
    try:
        return np.linalg.svd(theta, full_matrices=False)
    except np.linalg.LinAlgError:
        if not np.isfinite(theta).all():
            raise NumericalToleranceError("path-sum tensor contains non-finite entries") from None
        return scipy.linalg.svd(theta, full_matrices=False, lapack_driver="gesvd")


def _truncate(s, cutoff, max_bond):
    keep = int(np.count_nonzero(s > cutoff * s[0])) if s[0] > 0 else 1
    keep = max(keep, 1)
    if max_bond is not None:
        keep = min(keep, max_bond)
    return keep


def propagate_compressed(prop, table, n_steps, kmax, cutoff=1e-7, max_bond=None):
    """Matrix-product-state version of :func:`propagate_dense`.

    Sites are window points, oldest first.  The first site's left bond
    carries the initial pair index so the whole map is propagated at once.
    Each step applies the coupling of the new point to every window site
    as a bond-dimension-3 operator (the new point enters only through its
    ds class) and compresses in a single left-to-right sweep over a
    right-canonical chain.

    Returns ``(maps, max_bond_seen)``.
    """
    kmax = min(kmax, n_steps)
    maps = np.zeros((n_steps + 1, 4, 4), dtype=complex)
    maps[0] = np.eye(4)
    first = np.zeros((4, 4, 1), dtype=complex)
    first[np.arange(4), np.arange(4), 0] = _self_factor(table.lookup(0, 0, 1))
    sites = [first]
    window = [0]
    widest = 1
    for n in range(1, n_steps + 1):
        m = len(sites)
        bulk = [influence_classes(_bulk(table, n, k)) for k in window]

        # reduced density matrix at step n, with end-cell coefficients
        env = None
        for j, k in enumerate(window):
            g = influence_classes(_end(table, n, k))[PAIR_CLASS]
            if j == m - 1:
                g = g * prop
            T = sites[j]
            if env is None:
                env = np.einsum("apb,qp->aqb", T, g)
            else:
                a0, _, b = env.shape
                tmp = (env.reshape(a0 * 4, b) @ T.reshape(b, -1)).reshape(a0, 4, 4, -1)
                env = np.einsum("aqpc,qp->aqc", tmp, g)
        maps[n] = (env[:, :, 0] * _self_factor(_end(table, n, n))).T

        # right-canonical form of the current chain
        for j in range(m - 1, 0, -1):
            a, p, b = sites[j].shape
            q, r = np.linalg.qr(sites[j].reshape(a, p * b).T)
            sites[j] = q.T.reshape(-1, p, b)
            sites[j - 1] = np.einsum("apb,cb->apc", sites[j - 1], r)

        full = m >= kmax
        self_bulk = _self_factor(_bulk(table, n, n))
        new = []
        R = None
        start = 0
        if full and m == 1:
            # kmax = 1: the only site is both the oldest and the previous point
            g = bulk[0][PAIR_CLASS] * prop
            tail = np.einsum("ap,qp->aq", sites[0][:, :, 0], g) * self_bulk[None, :]
            new.append(tail[:, :, None])
            start = m
        elif full:
            # oldest point meets the new one for the last time, then is summed out
            R = np.einsum("apb,cp->abc", sites[0], bulk[0])
            start = 1
        for j in range(start, m):
            T = sites[j]
            a, p, b = T.shape
            F = bulk[j]
            if R is None:
                theta = np.einsum("apb,cp->apbc", T, F)
            else:
                x = R.shape[0]
                theta = np.empty((x, p, b, 3), dtype=complex)
                Tm = T.reshape(a, p * b)
                for c in range(3):
                    theta[..., c] = (R[:, :, c] @ Tm).reshape(x, p, b) * F[c][None, :, None]
            x = theta.shape[0]
            if j == m - 1:
                # last old site: expand class -> pair index of the new point, apply free propagator
                theta = theta[:, :, 0, :][:, :, PAIR_CLASS] * prop.T[None, :, :]
                u, s, vh = _svd(theta.reshape(x * 4, 4))
                keep = _truncate(s, cutoff, max_bond)
                new.append(u[:, :keep].reshape(x, 4, keep))
                tail = (s[:keep, None] * vh[:keep]) * self_bulk[None, :]
                new.append(tail[:, :, None])
            else:
                u, s, vh = _svd(theta.reshape(x * 4, b * 3))
                keep = _truncate(s, cutoff, max_bond)
                new.append(u[:, :keep].reshape(x, 4, keep))
                R = (s[:keep, None] * vh[:keep]).reshape(keep, b, 3)
        window.append(n)
        if full:
            window.pop(0)
        sites = new
        widest = max(widest, max(t.shape[2] for t in sites))
    log.debug("compressed path sum: %d steps, widest bond %d", n_steps, widest)
    return maps, widest

"""Column-stacking superoperator helpers.

vec(X)[i + d*j] = X[i, j], so vec(A X B) = (B^T kron A) vec(X).  Every
d^2 x d^2 matrix in the package uses this convention.
"""
import numpy as np

__all__ = [
    "vec",
    "unvec",
    "spre",
    "spost",
    "sprepost",
    "commutator_superop",
    "choi_state",
    "choi_min_eigenvalue",
    "trace_deviation",
    "hermiticity_deviation",
]


def vec(X):
    return np.asarray(X).reshape(-1, order="F")


def unvec(v, d=None):
    v = np.asarray(v)
    if d is None:
        d = int(round(np.sqrt(v.shape[-1])))
    return v.reshape(d, d, order="F")


def spre(A):
    """X -> A X"""
    A = np.asarray(A)
    return np.kron(np.eye(A.shape[0]), A)


def spost(B):
    """X -> X B"""
    B = np.asarray(B)
    return np.kron(B.T, np.eye(B.shape[0]))


def sprepost(A, B):
    """X -> A X B"""
    return np.kron(np.asarray(B).T, np.asarray(A))


def commutator_superop(H):
    """X -> -i [H, X]"""
    return -1j * (spre(H) - spost(H))


def choi_state(phi, d):
    """Normalized Choi state (phi kron id)(|Phi><Phi|), system factor first."""
    phi4 = np.asarray(phi).reshape(d, d, d, d)  # [b, a, j, i] for <a|phi(|i><j|)|b>
    return phi4.transpose(1, 3, 0, 2).reshape(d * d, d * d) / d


def choi_min_eigenvalue(phi, d):
    C = choi_state(phi, d)
    return float(np.linalg.eigvalsh(0.5 * (C + C.conj().T))[0])


def trace_deviation(phi, d):
    """max |Tr[phi(X)] - Tr[X]| over matrix units, i.e. max |vec(I)^T phi - vec(I)^T|."""
    w = vec(np.eye(d))
    return float(np.max(np.abs(w @ np.asarray(phi) - w)))


def _transpose_perm(d):
    idx = np.arange(d * d)
    i, j = idx % d, idx // d
    return j + d * i


def hermiticity_deviation(phi, d):
    """max |phi(X^dag) - phi(X)^dag| over matrix units."""
    phi = np.asarray(phi)
    perm = _transpose_perm(d)
    # phi(X^dag) = phi S conj(x); phi(X)^dag = S conj(phi x)
    lhs = phi[:, perm]
    rhs = np.conj(phi)[perm, :]
    return float(np.max(np.abs(lhs - rhs)))

"""Small shared linear-algebra helpers.

Everything here is deterministic: SVD/QR outputs are post-processed with a
fixed sign convention so that repeated runs (and different thread counts)
produce bit-identical bases.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


def spectral_norm(a):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    if a.shape[-2] == 1 or a.shape[-1] == 1:
        return float(np.linalg.norm(a))
    return float(np.linalg.svd(a, compute_uv=False)[0])


def batched_spectral_norms(stack):
    """Largest singular value of each matrix in a (k, p, q) stack."""
    stack = np.asarray(stack, dtype=float)
    if stack.shape[0] == 0:
        return np.zeros(0)
    return np.linalg.svd(stack, compute_uv=False)[:, 0]


def _fix_column_signs(q):
    # make the largest-magnitude entry of each column positive
    if q.size == 0:
        return q
    idx = np.argmax(np.abs(q), axis=0)
    signs = np.sign(q[idx, np.arange(q.shape[1])])
    signs[signs == 0] = 1.0
    return q * signs


def orth_columns(a, rank=None, rtol=1e-12):
    """Deterministic orthonormal basis of the column space of ``a``.

    If ``rank`` is given the first ``rank`` left singular vectors are used
    regardless of the singular-value profile; otherwise the numerical rank
    at relative tolerance ``rtol`` decides.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError("expected a matrix")
    if a.shape[1] == 0:
        return np.zeros((a.shape[0], 0))
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if rank is None:
        cut = s[0] * rtol if s.size and s[0] > 0 else 0.0
        rank = int(np.sum(s > cut))
    return _fix_column_signs(u[:, :rank])


def rowspace_basis(a, rank):
    """Orthonormal basis (columns) of the row space of ``a``."""
    a = np.asarray(a, dtype=float)
    _, _, vt = np.linalg.svd(a)
    return _fix_column_signs(vt[:rank].T)


def nullspace_basis(a, nullity):
    """Orthonormal basis (columns) of the kernel of ``a``, dimension forced.

    The trailing ``nullity`` right singular vectors; the caller supplies the
    kernel dimension, so near-degenerate spectra cannot change the shape.
    """
    a = np.asarray(a, dtype=float)
    if nullity == 0:
        return np.zeros((a.shape[1], 0))
    _, _, vt = np.linalg.svd(a)
    return _fix_column_signs(vt[a.shape[1] - nullity:].T)


def qr_pos(a):
    """QR with the R diagonal forced nonnegative (unique thin factorization)."""
    q, r = np.linalg.qr(a)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d, r * d[:, None]


def principal_angles(a, b):
    """Principal angles (radians, ascending) between column spans of a and b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[1] == 0 or b.shape[1] == 0:
        return np.zeros(0)
    ang = scipy.linalg.subspace_angles(a, b)
    return np.sort(ang)


def max_principal_angle(a, b):
    ang = principal_angles(a, b)
    return float(ang[-1]) if ang.size else 0.0


def haar_orthogonal(rng, d):
    """Haar-distributed orthogonal matrix (QR of a Gaussian, sign-fixed)."""
    if d == 0:
        return np.zeros((0, 0))
    g = rng.standard_normal((d, d))
    q, _ = qr_pos(g)
    return q


def random_bounded_cond(rng, d, cond):
    """Random invertible matrix with condition number exactly ``cond`` (d >= 2).

    Singular values are log-spaced in [cond**-0.5, cond**0.5] so the spectral
    condition number equals ``cond``; for d == 1 the matrix is (1).
    """
    if cond < 1.0:
        raise ValueError("condition bound must be >= 1")
    if d == 1 or cond == 1.0:
        return np.eye(d)
    u = haar_orthogonal(rng, d)
    v = haar_orthogonal(rng, d)
    sig = cond ** np.linspace(-0.5, 0.5, d)
    return (u * sig) @ v.T


def slope_intercept(x, y):
    """Least-squares line fit returning (slope, intercept).

    Centered normal equations; requires at least two distinct abscissae.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points")
    xm = x.mean()
    ym = y.mean()
    dx = x - xm
    denom = float(dx @ dx)
    if denom == 0.0:
        raise ValueError("degenerate abscissae")
    slope = float(dx @ (y - ym)) / denom
    return slope, ym - slope * xm


def logsumexp(terms):
    """log(sum(exp(terms))) with the max factored out; -inf for empty input."""
    t = np.asarray(terms, dtype=float)
    t = t[~np.isnan(t)]
    if t.size == 0:
        return float("-inf")
    m = float(np.max(t))
    if m == float("-inf"):
        return float("-inf")
    if m == float("inf"):
        return float("inf")
    return m + float(np.log(np.sum(np.exp(t - m))))

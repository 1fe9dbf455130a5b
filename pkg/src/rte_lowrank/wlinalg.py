"""Weighted inner products, weighted MGS, weighted truncated SVD, and expmv.

All factorizations here are orthonormal with respect to a diagonal weighted
inner product <u, v>_w = sum_i w_i u_i v_i, with w either the grid spacing
replicated over space or the Gauss-Legendre weights in angle.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .exceptions import NumericalFailureError

DENSE_EXPM_LIMIT = 2000

# expmv switches to a dense exponential for operators this stiff but small;
# beyond _DENSE_FALLBACK_DIM the Taylor loop is used regardless of cost.
_DENSE_SWITCH_NORM = 4096.0
_DENSE_FALLBACK_DIM = 600

_MGS_TAU = 1e-10
_NORM_EST_SEED = 0x5EED


def vec(m):
    """Column-major vectorization."""
    return np.asarray(m).reshape(-1, order="F")


def unvec(a, shape):
    """Inverse of :func:`vec`."""
    return np.asarray(a).reshape(shape, order="F")


def weighted_inner(a, b, w):
    """Return a^T diag(w) b for matrices (or vectors) sharing the row count."""
    a = np.atleast_2d(np.asarray(a, dtype=float).T).T
    b = np.atleast_2d(np.asarray(b, dtype=float).T).T
    w = np.asarray(w, dtype=float)
    if a.shape[0] != w.shape[0] or b.shape[0] != w.shape[0]:
        raise ValueError(
            f"row mismatch: a has {a.shape[0]}, b has {b.shape[0]}, "
            f"w has {w.shape[0]}"
        )
    return a.T @ (w[:, None] * b)


def weighted_norm(v, w):
    """Weighted 2-norm of a vector, or weighted Frobenius norm of a matrix."""
    v = np.asarray(v)
    w = np.asarray(w)
    if v.ndim == 1:
        return math.sqrt(float(np.dot(w, v * v)))
    return math.sqrt(float(np.sum(w[:, None] * v * v)))


def frob_norm_weighted(f, wx, wmu):
    """Frobenius norm of a space-angle matrix in the dx x dmu measure."""
    f = np.asarray(f)
    return math.sqrt(float(np.einsum("i,ij,j->", wx, f * f, wmu)))


class SparseOperator:
    """A linear map exposed through its action on vectors.

    ``matrix`` optionally carries an explicit sparse form (used by implicit
    solves, the dense fallback of expmv, and cross-checking tests); it can be
    supplied directly or through a factory that is invoked on first access,
    so hot paths that only need the action never pay for assembly.
    """

    def __init__(self, dim, apply, matrix=None, name="operator",
                 matrix_factory=None):
        self.dim = dim
        self.apply = apply
        self.name = name
        self._matrix = matrix
        self._matrix_factory = matrix_factory

    @property
    def has_matrix(self):
        return self._matrix is not None or self._matrix_factory is not None

    @property
    def matrix(self):
        if self._matrix is None and self._matrix_factory is not None:
            self._matrix = self._matrix_factory()
        return self._matrix


@dataclass
class QrResult:
    """Weighted QR factorization a = q @ r_factor with q w-orthonormal.

    Columns listed in ``replaced_columns`` were rank deficient; their q
    columns are deterministic seeded fallback directions and contribute a
    zero diagonal entry in r_factor.
    """

    q: np.ndarray
    r_factor: np.ndarray
    replaced_columns: set = field(default_factory=set)


def weighted_mgs(a, w, tau=_MGS_TAU, seed=0):
    """Modified Gram-Schmidt in the w-inner product, with reorthogonalization.

    Parameters
    ----------
    a : (m, r) array
        Columns to orthonormalize, m >= r.
    w : (m,) array
        Positive weights defining the inner product.
    tau : float
        Relative rank-deficiency threshold.  A column whose post-projection
        norm falls below tau times its original norm (floored at a
        machine-scale absolute threshold) is replaced by a fallback vector.
    seed : int
        Seed of the pseudorandom stream supplying replacement vectors.

    Each column is projected against the previous ones twice ("twice is
    enough") so the orthonormality defect stays at roundoff even for badly
    conditioned input.
    """
    a = np.asarray(a, dtype=float)
    w = np.asarray(w, dtype=float)
    m, r = a.shape
    if m < r:
        raise ValueError(f"need at least as many rows as columns, got {m} x {r}")

    col_norms = np.array([weighted_norm(a[:, j], w) for j in range(r)])
    scale = col_norms.max() if r else 0.0
    abs_floor = np.finfo(float).eps * scale

    # pre-scale live columns to unit w-norm; undo through r_factor at the end
    col_scale = np.where(col_norms > abs_floor, col_norms, 1.0)
    a_s = a / col_scale

    q = np.zeros((m, r))
    r_factor = np.zeros((r, r))
    replaced = set()
    rng = np.random.default_rng(seed)

    for j in range(r):
        v = a_s[:, j].copy()
        norm0 = weighted_norm(v, w)
        for _ in range(2):
            for i in range(j):
                c = float(np.dot(q[:, i], w * v))
                v -= c * q[:, i]
                r_factor[i, j] += c
        norm1 = weighted_norm(v, w)
        if norm1 <= tau * max(norm0, abs_floor / col_scale[j]):
            replaced.add(j)
            r_factor[j, j] = 0.0
            v = _replacement_column(q[:, :j], w, rng)
        else:
            v /= norm1
            r_factor[j, j] = norm1
        q[:, j] = v

    r_factor *= col_scale[None, :]
    return QrResult(q, r_factor, replaced)


def _replacement_column(q_prev, w, rng):
    """Draw a deterministic fallback direction w-orthonormal to q_prev."""
    m = w.shape[0]
    for _ in range(100):
        v = rng.standard_normal(m)
        for _ in range(2):
            if q_prev.shape[1]:
                v -= q_prev @ (q_prev.T @ (w * v))
        nrm = weighted_norm(v, w)
        if nrm > 1e-8 * math.sqrt(m):
            return v / nrm
    raise NumericalFailureError("could not generate a replacement column")


def weighted_truncated_svd(f, r, wx, wmu):
    """Best rank-r approximation of f in the (wx, wmu)-weighted norm.

    Returns (x, s, v, sigma_tail): x and v orthonormal in their weighted inner
    products, s diagonal with nonincreasing entries, and sigma_tail the first
    discarded weighted singular value (0 when r equals the full rank).
    Computed by an SVD of diag(sqrt(wx)) f diag(sqrt(wmu)) followed by
    unscaling.
    """
    f = np.asarray(f, dtype=float)
    wx = np.asarray(wx, dtype=float)
    wmu = np.asarray(wmu, dtype=float)
    n_x, n_mu = f.shape
    if not 1 <= r <= min(n_x, n_mu):
        raise ValueError(f"rank {r} out of range for a {n_x} x {n_mu} matrix")

    sqx = np.sqrt(wx)
    sqm = np.sqrt(wmu)
    u, sig, vt = np.linalg.svd(sqx[:, None] * f * sqm[None, :], full_matrices=False)

    # deterministic sign convention: first non-negligible entry of each
    # weighted left singular vector is positive
    for k in range(len(sig)):
        col = u[:, k]
        nz = np.nonzero(np.abs(col) > 1e-12 * max(1.0, np.abs(col).max()))[0]
        if nz.size and col[nz[0]] < 0:
            u[:, k] = -col
            vt[k, :] = -vt[k, :]

    x = u[:, :r] / sqx[:, None]
    v = vt[:r, :].T / sqm[:, None]
    s = np.diag(sig[:r])
    sigma_tail = float(sig[r]) if r < len(sig) else 0.0
    return x, s, v, sigma_tail


def estimate_operator_norm(op, n_iter=8):
    """Power-iteration estimate of the spectral norm of op (8 iterations)."""
    rng = np.random.default_rng(_NORM_EST_SEED)
    v = rng.standard_normal(op.dim)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(n_iter):
        av = op.apply(v)
        nrm = np.linalg.norm(av)
        if nrm == 0.0 or not np.isfinite(nrm):
            return nrm
        est = nrm
        v = av / nrm
    return est


def expmv(op, t, v, tol=1e-10):
    """Compute exp(t A) v using only the action of A.

    Parameters
    ----------
    op : SparseOperator
    t : float
    v : (op.dim,) array
    tol : float
        Target relative accuracy.

    The workhorse is a truncated Taylor series with time-step scaling: t is
    split into m substeps so the scaled operator-norm estimate is at most 1,
    and within each substep terms are summed until the term norm drops below
    the (per-substep) tolerance, capped at 60 terms.  Very stiff operators of
    small dimension are routed through the dense exponential instead, where
    the Taylor loop would need millions of substeps.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = np.asarray(v, dtype=float)
    if v.shape != (op.dim,):
        raise ValueError(f"vector length {v.shape} does not match dim {op.dim}")
    if t == 0.0:
        return v.copy()

    scaled = estimate_operator_norm(op) * abs(t)
    if not np.isfinite(scaled):
        raise NumericalFailureError(
            f"norm estimate of {op.name} is not finite (t={t})"
        )

    if scaled > _DENSE_SWITCH_NORM and op.dim <= _DENSE_FALLBACK_DIM \
            and op.has_matrix:
        w = dense_expm(t * op.matrix.toarray()) @ v
        if not np.all(np.isfinite(w)):
            raise NumericalFailureError(
                f"exp({t} * {op.name}) v overflowed (dense fallback)"
            )
        return w

    n_seg = max(1, int(math.ceil(scaled * 1.1)))
    h = t / n_seg
    tol_seg = max(tol / n_seg, 4 * np.finfo(float).eps)
    w = v.copy()
    for _ in range(n_seg):
        term = w.copy()
        acc = w.copy()
        for k in range(1, 61):
            term = (h / k) * op.apply(term)
            acc += term
            if np.linalg.norm(term) <= tol_seg * np.linalg.norm(acc):
                break
        w = acc
        if not np.all(np.isfinite(w)):
            raise NumericalFailureError(
                f"exp({t} * {op.name}) v overflowed during the Taylor sweep"
            )
    return w


def dense_expm(a, dense_limit=DENSE_EXPM_LIMIT):
    """Dense matrix exponential (Pade with scaling and squaring)."""
    a = np.asarray(a)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected a square matrix, got {a.shape}")
    if n > dense_limit:
        raise ValueError(f"matrix dimension {n} exceeds dense limit {dense_limit}")
    return sla.expm(a)

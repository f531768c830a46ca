"""Dense symmetric / SPD matrix kernels and affine-invariant manifold maps.

Everything here works on plain ``(n, n)`` float arrays.  Square roots are
lower-triangular Cholesky factors with positive diagonals unless a caller
explicitly passes a general full-rank root (any ``L`` with ``L @ L.T == X``
is accepted by the manifold maps; the results do not depend on the choice).

The one numerically delicate operation is rebuilding a covariance after an
exponential step.  ``scaled_exp_factor`` returns the triangular factor of
``L exp(s*S) L.T`` without ever forming that product, so positivity survives
eigenvalue scales far beyond what a dense matrix could represent.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

# Per-half-step cap on exponent magnitude.  exp(+-330) stays comfortably
# inside double range even after squaring in a Gram product; the algorithm's
# own steps satisfy ||E*dt|| <= beta <= 1, so the cap only matters in
# synthetic stress tests.
_HALF_EXP_CLIP = 330.0


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A matrix expected to be SPD failed its factorization."""


class NoConvergenceError(np.linalg.LinAlgError):
    """The symmetric eigensolver failed (non-finite input, no convergence)."""


class SingularFactorError(np.linalg.LinAlgError):
    """A square-root factor has a zero diagonal / is rank deficient."""


def symmetrize(m: np.ndarray) -> np.ndarray:
    """(M + M.T)/2: removes rounding asymmetry, a no-op in exact arithmetic."""
    return 0.5 * (m + m.T)


def cholesky(s: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T = s.

    Raises:
        NotPositiveDefiniteError: if ``s`` is not finite or a pivot fails,
            i.e. positivity was lost upstream.
    """
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise NotPositiveDefiniteError("matrix has non-finite entries")
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError as err:
        raise NotPositiveDefiniteError(f"matrix is not positive definite: {err}") from err


def sym_eig(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns:
        (w, q): eigenvalues ascending, orthogonal eigenvector matrix with
        s = q @ diag(w) @ q.T.
    """
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise NoConvergenceError("matrix has non-finite entries")
    try:
        w, q = np.linalg.eigh(s)
    except np.linalg.LinAlgError as err:
        raise NoConvergenceError(f"symmetric eigensolver failed: {err}") from err
    return w, q


def sym_expm(s: np.ndarray) -> np.ndarray:
    """Matrix exponential of a symmetric matrix via eigendecomposition.

    The result is symmetric positive definite by construction
    (Q e^diag Q.T with strictly positive diagonal).
    """
    w, q = sym_eig(s)
    ew = np.exp(np.clip(w, -2.0 * _HALF_EXP_CLIP, 2.0 * _HALF_EXP_CLIP))
    return symmetrize((q * ew) @ q.T)


def spectral_norm(s: np.ndarray) -> float:
    """max_i |lambda_i| of a symmetric matrix."""
    s = np.asarray(s, dtype=float)
    if s.size == 0:
        return 0.0
    if not np.all(np.isfinite(s)):
        raise NoConvergenceError("matrix has non-finite entries")
    return float(np.max(np.abs(np.linalg.eigvalsh(s))))


def _is_lower_triangular(root: np.ndarray) -> bool:
    return bool(np.all(root[np.triu_indices_from(root, k=1)] == 0.0))


def _solve_root(root: np.ndarray, b: np.ndarray) -> np.ndarray:
    """root^{-1} @ b for a triangular or general full-rank root."""
    if _is_lower_triangular(root):
        if np.any(np.diag(root) == 0.0):
            raise SingularFactorError("square-root factor has a zero diagonal")
        return solve_triangular(root, b, lower=True)
    try:
        return np.linalg.solve(root, b)
    except np.linalg.LinAlgError as err:
        raise SingularFactorError(f"square-root factor is singular: {err}") from err


def _whiten(root: np.ndarray, m: np.ndarray) -> np.ndarray:
    """root^{-1} @ m @ root^{-T}, symmetrized."""
    half = _solve_root(root, np.asarray(m, dtype=float))
    return symmetrize(_solve_root(root, half.T).T)


def scaled_exp_factor(root: np.ndarray, s: np.ndarray, scale: float) -> np.ndarray:
    """Lower-triangular Cholesky factor of ``root @ exp(scale*s) @ root.T``.

    Built as QR of (root @ Q @ e^{scale*w/2}).T, which keeps the extreme
    eigendirections in factored form instead of losing them to rounding in
    a dense Gram product.  Never loses positivity for finite inputs.
    """
    w, q = sym_eig(s)
    half = np.exp(np.clip(0.5 * scale * w, -_HALF_EXP_CLIP, _HALF_EXP_CLIP))
    b = (root @ q) * half[None, :]
    r = np.linalg.qr(b.T, mode="r")
    d = np.diag(r).copy()
    if not np.all(np.isfinite(d)):
        raise NotPositiveDefiniteError("exponential step produced a non-finite factor")
    # Pivots of directions contracted below eps*||B|| cancel to exact zero;
    # repair them at the rounding floor (a no-op whenever ||s*scale|| <= ~36,
    # which covers every step the adaptive rule can take).
    dead = d == 0.0
    if np.any(dead):
        floor = np.finfo(float).eps * float(np.max(np.abs(d)))
        if floor == 0.0:
            raise NotPositiveDefiniteError("exponential step produced a zero factor")
        r = r + np.diag(np.where(dead, floor, 0.0))
        d = np.diag(r)
    return (r * np.where(d < 0.0, -1.0, 1.0)[:, None]).T


def exp_map(x: np.ndarray, sigma: np.ndarray, root: np.ndarray | None = None) -> np.ndarray:
    """Geodesic exponential map on the SPD cone at ``x``.

    Computes L exp(L^{-1} sigma L^{-T}) L.T for any square root L of x;
    the value does not depend on which root is used.  The result is SPD
    unconditionally for every symmetric ``sigma``.
    """
    x = np.asarray(x, dtype=float)
    if root is None:
        root = cholesky(x)
    fac = scaled_exp_factor(root, _whiten(root, sigma), 1.0)
    return symmetrize(fac @ fac.T)


def log_map(x: np.ndarray, y: np.ndarray, root: np.ndarray | None = None) -> np.ndarray:
    """Inverse of exp_map: the tangent vector carrying x to y.

    Computes L log(L^{-1} y L^{-T}) L.T; root-independent like exp_map.
    """
    if root is None:
        root = cholesky(np.asarray(x, dtype=float))
    w, q = sym_eig(_whiten(root, np.asarray(y, dtype=float)))
    if np.any(w <= 0.0):
        raise NotPositiveDefiniteError("log_map target is not positive definite")
    inner = symmetrize((q * np.log(w)) @ q.T)
    return symmetrize((root @ inner) @ root.T)


def riemannian_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Affine-invariant geodesic distance ||log(X^{-1/2} Y X^{-1/2})||_F.

    Invariant under X, Y -> T X T.T, T Y T.T for any invertible T.
    """
    root = cholesky(np.asarray(x, dtype=float))
    w = np.linalg.eigvalsh(_whiten(root, np.asarray(y, dtype=float)))
    if np.any(w <= 0.0):
        raise NotPositiveDefiniteError("distance argument is not positive definite")
    return float(np.sqrt(np.sum(np.log(w) ** 2)))

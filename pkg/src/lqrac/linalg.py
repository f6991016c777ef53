"""Dense linear-algebra kernel: symmetric vectorization, spectral radii,
and direct + iterative solvers for discrete Lyapunov and Riccati equations.

Everything here targets desk-scale problems (state dimension up to a few
tens), so the Lyapunov solver may use the exact Kronecker formulation
(O(n^6)) and the Riccati solver plain value iteration.

Conventions
-----------
* ``svec`` stacks the upper triangle of a symmetric matrix in row-major
  order (1,1),(1,2),...,(1,m),(2,2),...,(m,m) with off-diagonal entries
  scaled by sqrt(2), so that ``svec(X) @ svec(Y) == trace(X @ Y)``.
* "Stable" always means spectral radius < 1 - STABILITY_MARGIN, which
  keeps floating-point boundary cases from flapping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AsymmetricInput,
    ConvergenceFailure,
    DimensionMismatch,
    NotControllable,
    UnstableMatrix,
)

# Margin below 1 required of every "stable" spectral radius.
STABILITY_MARGIN = 1e-12

# Largest matrix side accepted by the dense eigenvalue helpers.
MAX_EIG_SIDE = 50

_SQRT2 = math.sqrt(2.0)


def svec_length(m: int) -> int:
    """Length of the symmetric vectorization of an m x m matrix."""
    return m * (m + 1) // 2


def smat_side(length: int) -> int:
    """Matrix side m with m(m+1)/2 == length; raises if no such m."""
    m = int((math.isqrt(8 * length + 1) - 1) // 2)
    if svec_length(m) != length:
        raise DimensionMismatch(
            f"{length} is not a triangular number; no symmetric matrix side matches"
        )
    return m


def svec(x: np.ndarray, sym_tol: float = 1e-9) -> np.ndarray:
    """Vectorize a symmetric matrix with sqrt(2)-scaled off-diagonals.

    Parameters
    ----------
    x : (m, m) array
        Symmetric matrix.  Asymmetry beyond ``sym_tol`` (relative to the
        matrix magnitude) raises :class:`AsymmetricInput`.

    Returns
    -------
    (m(m+1)/2,) array such that ``svec(X) @ svec(Y) == trace(X @ Y)``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {x.shape}")
    scale = max(1.0, float(np.max(np.abs(x))))
    if np.max(np.abs(x - x.T)) > sym_tol * scale:
        raise AsymmetricInput("matrix is not symmetric within tolerance")
    m = x.shape[0]
    iu, ju = np.triu_indices(m)
    out = x[iu, ju].copy()
    out[iu != ju] *= _SQRT2
    return out


def smat(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`svec`: rebuild the symmetric matrix."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatch(f"expected a vector, got shape {v.shape}")
    m = smat_side(v.shape[0])
    out = np.zeros((m, m))
    iu, ju = np.triu_indices(m)
    vals = v.copy()
    off = iu != ju
    vals[off] /= _SQRT2
    out[iu, ju] = vals
    out[ju, iu] = vals
    return out


def spectral_radius(mat: np.ndarray, max_side: int = MAX_EIG_SIDE) -> float:
    """Largest eigenvalue modulus of a (possibly non-symmetric) matrix."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {mat.shape}")
    if mat.shape[0] > max_side:
        raise DimensionMismatch(
            f"side {mat.shape[0]} exceeds the desk-scale cap {max_side}"
        )
    if not np.all(np.isfinite(mat)):
        raise DimensionMismatch("matrix has non-finite entries")
    if mat.shape[0] == 1:  # avoid LAPACK overhead in scalar-heavy loops
        return abs(float(mat[0, 0]))
    try:
        eig = np.linalg.eigvals(mat)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"eigenvalue iteration failed: {exc}") from exc
    return float(np.max(np.abs(eig)))


def is_stable(mat: np.ndarray) -> bool:
    return spectral_radius(mat) < 1.0 - STABILITY_MARGIN


@dataclass(frozen=True)
class LyapunovSolution:
    """Solution of S = W + F S F^T with its defect and iteration count.

    ``iterations`` is 0 for the direct (Kronecker) backend.
    """

    solution: np.ndarray
    residual: float
    iterations: int


def dlyap_residual(f: np.ndarray, w: np.ndarray, s: np.ndarray) -> float:
    """Frobenius norm of S - W - F S F^T."""
    return float(np.linalg.norm(s - w - f @ s @ f.T))


def solve_dlyap(
    f: np.ndarray,
    w: np.ndarray,
    method: str = "direct",
    tol: float = 1e-12,
    max_iter: int = 200_000,
) -> LyapunovSolution:
    """Solve the discrete Lyapunov equation S = W + F S F^T.

    Parameters
    ----------
    f : (n, n) array
        Closed-loop matrix; must satisfy rho(F) < 1 - STABILITY_MARGIN.
    w : (n, n) array
        Symmetric forcing term (positive semidefinite for covariances).
    method : {"direct", "fixed_point"}
        "direct" solves (I - F (x) F) vec(S) = vec(W) exactly; the fixed
        point iteration S <- W + F S F^T exists as an independent
        cross-check and stops once the residual drops below ``tol``.

    Raises
    ------
    UnstableMatrix
        If rho(F) >= 1 - STABILITY_MARGIN (no bounded solution).
    ConvergenceFailure
        If the fixed-point backend exhausts ``max_iter``.
    """
    f = np.asarray(f, dtype=float)
    w = np.asarray(w, dtype=float)
    n = f.shape[0]
    if f.shape != (n, n) or w.shape != (n, n):
        raise DimensionMismatch("F and W must be square with equal sides")
    if spectral_radius(f) >= 1.0 - STABILITY_MARGIN:
        raise UnstableMatrix("rho(F) >= 1; Lyapunov equation has no bounded solution")
    w = 0.5 * (w + w.T)

    if method == "direct":
        lhs = np.eye(n * n) - np.kron(f, f)
        s = np.linalg.solve(lhs, w.reshape(-1)).reshape(n, n)
        s = 0.5 * (s + s.T)
        return LyapunovSolution(s, dlyap_residual(f, w, s), 0)
    if method == "fixed_point":
        s = w.copy()
        for it in range(1, max_iter + 1):
            s_next = w + f @ s @ f.T
            s_next = 0.5 * (s_next + s_next.T)
            res = dlyap_residual(f, w, s_next)
            s = s_next
            if res <= tol * max(1.0, float(np.linalg.norm(s))):
                return LyapunovSolution(s, res, it)
        raise ConvergenceFailure(
            f"fixed-point Lyapunov iteration did not reach tol={tol} in {max_iter} steps"
        )
    raise ValueError(f"unknown method {method!r}")


def controllability_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    blocks = [b]
    for _ in range(n - 1):
        blocks.append(a @ blocks[-1])
    return np.hstack(blocks)


def dare_residual(
    a: np.ndarray, b: np.ndarray, q: np.ndarray, r: np.ndarray, p: np.ndarray
) -> float:
    """Frobenius norm of the Riccati defect at P."""
    btp = b.T @ p
    gain_term = a.T @ btp.T @ np.linalg.solve(r + btp @ b, btp @ a)
    return float(np.linalg.norm(p - (q + a.T @ p @ a - gain_term)))


def solve_dare(
    a: np.ndarray,
    b: np.ndarray,
    q: np.ndarray,
    r: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 1_000_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve the discrete algebraic Riccati equation by value iteration.

    Iterates P <- Q + A^T P A - A^T P B (R + B^T P B)^-1 B^T P A from
    P_0 = Q until the Riccati defect has Frobenius norm <= ``tol``.

    Returns
    -------
    (P, K) : the stabilizing solution and the optimal gain
        K = (R + B^T P B)^-1 B^T P A, with rho(A - B K) < 1.

    Raises
    ------
    NotControllable
        If the controllability matrix of (A, B) is rank deficient, or if
        Q or R fails positive definiteness.
    ConvergenceFailure
        If the iteration cap is reached, or the computed gain is not
        stabilizing.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    n = a.shape[0]
    if np.linalg.matrix_rank(controllability_matrix(a, b)) < n:
        raise NotControllable("(A, B) fails the controllability rank test")
    for name, m in (("Q", q), ("R", r)):
        if np.min(np.linalg.eigvalsh(0.5 * (m + m.T))) <= 0:
            raise NotControllable(f"{name} must be positive definite")

    p = q.copy()
    for _ in range(max_iter):
        btp = b.T @ p
        p_next = q + a.T @ p @ a - a.T @ btp.T @ np.linalg.solve(r + btp @ b, btp @ a)
        p_next = 0.5 * (p_next + p_next.T)
        if dare_residual(a, b, q, r, p_next) <= tol:
            p = p_next
            break
        p = p_next
    else:
        raise ConvergenceFailure(
            f"Riccati value iteration did not reach tol={tol} in {max_iter} steps"
        )
    k = np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
    if spectral_radius(a - b @ k) >= 1.0 - STABILITY_MARGIN:
        raise ConvergenceFailure("Riccati gain is not stabilizing")
    return p, k


def sigma_min(mat: np.ndarray) -> float:
    """Smallest singular value (equals the smallest eigenvalue on SPD input)."""
    return float(np.linalg.svd(np.asarray(mat, dtype=float), compute_uv=False)[-1])


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix, clipping round-off negatives."""
    mat = np.asarray(mat, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T

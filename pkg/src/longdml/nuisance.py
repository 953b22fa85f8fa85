"""Gaussian-kernel ridge regression.

Fits use a pivoted-Cholesky factor ``K ~ G G^T`` taken down to round-off
level, which makes generalized cross-validation and the solve cost
``O(n r^2)`` instead of ``O(n^3)``. The solution is then polished against
the full Gram matrix by preconditioned iterative refinement, so the linear
system is satisfied to the same tolerance as a dense solve. Small problems,
or inputs whose Gram matrix is not numerically low rank, take the dense
eigendecomposition / Cholesky route.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist

from .core import KernelConfig
from .errors import NumericalError

DENSE_BELOW = 400
PIVOT_TOL = 1e-13
MAX_RANK_FRACTION = 0.35
RESIDUAL_TOL = 1e-10
_BLOCK = 2048


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError("inputs must be a vector or a 2-d array")
    return a


def gaussian_gram(a: np.ndarray, b: np.ndarray, lengthscale: np.ndarray) -> np.ndarray:
    """``exp(-|a_i - b_j|^2 / 2)`` after dividing every column by its lengthscale."""
    a = a / lengthscale
    b = b / lengthscale
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-0.5 * sq)


def median_lengthscale(x: np.ndarray, max_rows: int = 1000) -> np.ndarray:
    """Per-dimension median heuristic.

    Each column is scaled by its median absolute pairwise difference, then the
    whole vector by the median pairwise distance of the scaled inputs. A
    deterministic, evenly spaced subsample keeps the cost bounded.
    """
    x = _as_matrix(x)
    n, p = x.shape
    if n > max_rows:
        x = x[np.linspace(0, n - 1, max_rows).astype(int)]
    if x.shape[0] < 2:
        return np.ones(p)
    scale = np.empty(p)
    for j in range(p):
        diffs = pdist(x[:, j:j + 1], "cityblock")
        s = np.median(diffs)
        if not s > 0:
            s = diffs.mean()
        scale[j] = s if s > 0 else 1.0
    dist = pdist(x / scale)
    med = np.median(dist)
    if not med > 0:
        med = dist.mean() if dist.size and dist.mean() > 0 else 1.0
    return scale * med


@dataclass(frozen=True, eq=False)
class KernelMachine:
    """``f(q) = offset + k(q, anchors) @ coeffs`` with a Gaussian kernel."""

    anchors: np.ndarray
    coeffs: np.ndarray
    lengthscale: np.ndarray
    ridge: float = 0.0
    offset: float = 0.0

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]

    def gram(self, query) -> np.ndarray:
        return gaussian_gram(_as_matrix(query), self.anchors, self.lengthscale)

    def __call__(self, query) -> np.ndarray:
        return krr_predict(self, query)


def krr_predict(machine: KernelMachine, query) -> np.ndarray:
    q = np.asarray(query, dtype=float)
    if q.size == 0:
        return np.zeros(0)
    q = _as_matrix(q)
    if q.shape[1] != machine.dim:
        raise ValueError(f"query has {q.shape[1]} columns, machine expects {machine.dim}")
    out = np.empty(q.shape[0])
    for s in range(0, q.shape[0], _BLOCK):
        blk = q[s:s + _BLOCK]
        out[s:s + _BLOCK] = gaussian_gram(blk, machine.anchors, machine.lengthscale) @ machine.coeffs
    return out + machine.offset


# ---------------------------------------------------------------------------
# factorizations


def pivoted_cholesky(x: np.ndarray, lengthscale: np.ndarray, tol: float, max_rank: int):
    """Greedy pivoted Cholesky of the Gaussian Gram matrix.

    Returns ``G`` with ``K - G G^T`` PSD and its largest diagonal entry at most
    ``tol``, or ``None`` if that needs more than ``max_rank`` columns.
    """
    n = x.shape[0]
    xs = x / lengthscale
    diag = np.ones(n)
    G = np.zeros((n, min(max_rank, n)))
    for r in range(G.shape[1]):
        i = int(np.argmax(diag))
        if diag[i] <= tol:
            return G[:, :r]
        diff = xs - xs[i]
        col = np.exp(-0.5 * np.einsum("ij,ij->i", diff, diff))
        col -= G[:, :r] @ G[i, :r]
        col /= np.sqrt(diag[i])
        G[:, r] = col
        diag -= col * col
        diag[i] = 0.0
    if np.max(diag) <= tol:
        return G
    return None


def _gcv_scores(evals: np.ndarray, proj: np.ndarray, resid_out: float, n: int,
                ridges: Sequence[float]) -> np.ndarray:
    """GCV score per ridge given the spectrum of K restricted to a subspace.

    ``proj`` are the target's coordinates in the eigenbasis and ``resid_out``
    the squared norm of its component orthogonal to that basis.
    """
    scores = []
    for lam in ridges:
        shrink = (n * lam) / (evals + n * lam)
        rss = resid_out + np.sum((shrink * proj) ** 2)
        dof = n - 1 - np.sum(evals / (evals + n * lam))
        scores.append(n * rss / max(dof, 1e-12) ** 2)
    return np.asarray(scores)


def _cholesky_solve(K: np.ndarray, rhs: np.ndarray, shift: float) -> np.ndarray:
    n = K.shape[0]
    for jitter in (0.0, 1e-10, 1e-8, 1e-6):
        A = K + (shift + jitter) * np.eye(n)
        try:
            c, low = linalg.cho_factor(A, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        return linalg.cho_solve((c, low), rhs, check_finite=False)
    raise NumericalError("kernel system is not positive definite even with jitter 1e-6")


def _matvec_full(x: np.ndarray, lengthscale: np.ndarray, c: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[0])
    for s in range(0, x.shape[0], _BLOCK):
        out[s:s + _BLOCK] = gaussian_gram(x[s:s + _BLOCK], x, lengthscale) @ c
    return out


class LowRankSystem:
    """Solver for ``(K + s I) c = r`` with ``K ~ G G^T`` and exact refinement."""

    def __init__(self, x: np.ndarray, lengthscale: np.ndarray, G: np.ndarray):
        self.x, self.lengthscale, self.G = x, lengthscale, G
        evals, V = linalg.eigh(G.T @ G, check_finite=False)
        evals = np.maximum(evals, 0.0)
        keep = evals > evals.max(initial=0.0) * 1e-15
        self.evals = evals[keep]
        # orthonormal basis of range(G): U = G V diag(evals^-1/2)
        self.U = (G @ V[:, keep]) / np.sqrt(self.evals)

    def approx_solve(self, rhs: np.ndarray, shift: float) -> np.ndarray:
        p = self.U.T @ rhs
        inner = p / (self.evals + shift)
        return self.U @ inner + (rhs - self.U @ p) / shift

    def solve(self, rhs: np.ndarray, shift: float, tol: float = RESIDUAL_TOL,
              max_iter: int = 30) -> np.ndarray:
        c = self.approx_solve(rhs, shift)
        norm = max(np.linalg.norm(rhs), 1e-300)
        for _ in range(max_iter):
            resid = rhs - (_matvec_full(self.x, self.lengthscale, c) + shift * c)
            if np.linalg.norm(resid) <= tol * norm:
                return c
            c = c + self.approx_solve(resid, shift)
        raise NumericalError("iterative refinement of the kernel system did not converge")


# ---------------------------------------------------------------------------
# fitting


def _resolve_lengthscale(x: np.ndarray, cfg: KernelConfig, lengthscale) -> np.ndarray:
    if lengthscale is not None:
        ls = np.broadcast_to(np.asarray(lengthscale, dtype=float), (x.shape[1],)).copy()
    elif cfg.lengthscale is not None:
        ls = np.full(x.shape[1], float(cfg.lengthscale))
    else:
        ls = median_lengthscale(x)
    if np.any(~(ls > 0)):
        raise ValueError("lengthscale must be positive")
    return ls


def krr_fit(inputs, targets, cfg: Optional[KernelConfig] = None, *,
            ridge: Optional[float] = None, lengthscale=None) -> KernelMachine:
    """Kernel ridge regression of ``targets`` on ``inputs``.

    Targets are centred first (the mean becomes the machine's offset), so a
    constant target is reproduced exactly and heavy ridges shrink toward the
    mean. ``ridge`` fixes lambda_r; otherwise GCV picks it from the grid.
    The returned coefficients solve ``(K + n lambda_r I) c = y - mean(y)``.
    """
    cfg = cfg or KernelConfig()
    x = _as_matrix(inputs)
    y = np.asarray(targets, dtype=float).ravel()
    n = x.shape[0]
    if n < 2:
        raise ValueError("kernel ridge regression needs at least 2 rows")
    if y.shape[0] != n:
        raise ValueError(f"{n} input rows but {y.shape[0]} targets")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs and targets must be finite")
    ls = _resolve_lengthscale(x, cfg, lengthscale)
    offset = float(y.mean())
    yc = y - offset
    grid = (float(ridge),) if ridge is not None else cfg.ridge_grid

    system = None
    if n >= DENSE_BELOW:
        G = pivoted_cholesky(x, ls, PIVOT_TOL, int(MAX_RANK_FRACTION * n))
        if G is not None:
            system = LowRankSystem(x, ls, G)

    if not np.any(yc):
        lam = grid[0] if len(grid) == 1 else float(np.median(grid))
        return KernelMachine(x, np.zeros(n), ls, lam, offset)

    if system is not None:
        if len(grid) == 1:
            lam = grid[0]
        else:
            proj = system.U.T @ yc
            out = float(yc @ yc - proj @ proj)
            lam = grid[int(np.argmin(_gcv_scores(system.evals, proj, max(out, 0.0), n, grid)))]
        coeffs = system.solve(yc, n * lam)
    else:
        K = gaussian_gram(x, x, ls)
        if len(grid) == 1:
            lam = grid[0]
        else:
            evals, Q = linalg.eigh(K, check_finite=False)
            evals = np.maximum(evals, 0.0)
            lam = grid[int(np.argmin(_gcv_scores(evals, Q.T @ yc, 0.0, n, grid)))]
        coeffs = _cholesky_solve(K, yc, n * lam)
    if not np.all(np.isfinite(coeffs)):
        raise NumericalError("kernel ridge coefficients are not finite")
    return KernelMachine(x, coeffs, ls, float(lam), offset)


def system_residual(machine: KernelMachine, targets) -> float:
    """Relative residual of ``(K + n lambda I) c = y - offset`` on the training set."""
    y = np.asarray(targets, dtype=float).ravel() - machine.offset
    n = machine.anchors.shape[0]
    lhs = _matvec_full(machine.anchors, machine.lengthscale, machine.coeffs) + n * machine.ridge * machine.coeffs
    return float(np.linalg.norm(lhs - y) / max(np.linalg.norm(y), 1e-300))

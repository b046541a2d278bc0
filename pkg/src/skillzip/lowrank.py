"""Truncated SVD and the square-root energy split into factors.

The decomposition is a one-sided Jacobi SVD: plane rotations orthogonalize
the columns of the working matrix, accumulating the right factor, until
every column pair is orthogonal to a fixed threshold. Rotations are applied
in round-robin rounds of disjoint pairs so each round vectorizes, and the
schedule is fixed, which makes the result deterministic for a given input
on a given platform. A sign convention (largest-magnitude entry of each
left singular vector nonnegative) pins the remaining per-triplet ambiguity.

The split A = U sqrt(S), B = sqrt(S) V^T balances each rank's energy
between the two factors: column i of A and row i of B end up with equal
2-norms. That balance is what the later rank-wise rotation spreads across
dimensions before quantization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .prng import Prng

JACOBI_TOL = 1e-10
JACOBI_MAX_SWEEPS = 60


@dataclass(frozen=True)
class RankPolicy:
    """Number of retained triplets: a fixed count or an energy fraction."""

    mode: str
    value: float

    @staticmethod
    def fixed(r: int) -> "RankPolicy":
        if r < 1:
            raise ValidationError("fixed rank must be >= 1")
        return RankPolicy("fixed", float(r))

    @staticmethod
    def energy(eta: float) -> "RankPolicy":
        if not (0.0 < eta <= 1.0):
            raise ValidationError("energy fraction must lie in (0, 1]")
        return RankPolicy("energy", float(eta))

    @staticmethod
    def default_for(min_dim: int) -> "RankPolicy":
        return RankPolicy.fixed(max(1, min_dim // 8))


@dataclass
class SvdResult:
    u: np.ndarray  # (m, R) float32, orthonormal columns
    sigma: np.ndarray  # (R,) float64, nonincreasing, >= 0
    vt: np.ndarray  # (R, n) float32, orthonormal rows


def _round_robin_rounds(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: n-1 rounds of disjoint index pairs covering all
    column pairs exactly once. Odd n gets a bye slot."""
    players = list(range(n))
    if n % 2:
        players.append(-1)
    size = len(players)
    rounds = []
    arr = players[:]
    for _ in range(size - 1):
        p, q = [], []
        for i in range(size // 2):
            a, b = arr[i], arr[size - 1 - i]
            if a != -1 and b != -1:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        arr = [arr[0], arr[-1]] + arr[1:-1]
    return rounds


def _jacobi_orthogonalize(a: np.ndarray, tol: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    """Rotate column pairs of `a` until all are mutually orthogonal.

    Returns (a_rotated, v) with a_rotated == a_input @ v and v orthogonal.
    """
    m, n = a.shape
    a = a.astype(np.float64).copy()
    v = np.eye(n, dtype=np.float64)
    if n == 1:
        return a, v
    rounds = _round_robin_rounds(n)
    for _ in range(max_sweeps):
        rotated = 0
        for p, q in rounds:
            ap = a[:, p]
            aq = a[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            need = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not need.any():
                continue
            rotated += int(need.sum())
            zeta = np.zeros_like(gamma)
            np.divide(beta - alpha, 2.0 * gamma, out=zeta, where=need)
            t = np.copysign(1.0, zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            c = np.where(need, c, 1.0)
            s = np.where(need, s, 0.0)
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            vp = v[:, p]
            vq = v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if rotated == 0:
            break
    return a, v


def _complete_column(u: np.ndarray, j: int) -> np.ndarray:
    """Deterministic unit vector orthogonal to u[:, :j] (for zero triplets)."""
    m = u.shape[0]
    for k in range(m):
        cand = np.zeros(m, dtype=np.float64)
        cand[k] = 1.0
        if j:
            cand -= u[:, :j] @ (u[:, :j].T @ cand)
        norm = np.linalg.norm(cand)
        if norm > 0.5:
            return cand / norm
    raise ValidationError("could not complete an orthonormal basis")


def _svd_tall(w: np.ndarray, tol: float, max_sweeps: int):
    """Decomposition for m >= n, no sign convention yet."""
    m, n = w.shape
    rotated, v = _jacobi_orthogonalize(w, tol, max_sweeps)
    norms = np.linalg.norm(rotated, axis=0)
    order = np.argsort(-norms, kind="stable")
    sigma = norms[order]
    u = np.empty((m, n), dtype=np.float64)
    for out_j, src_j in enumerate(order):
        if sigma[out_j] > 0.0:
            u[:, out_j] = rotated[:, src_j] / sigma[out_j]
        else:
            u[:, out_j] = _complete_column(u, out_j)
    vt = v[:, order].T.copy()
    return u, sigma, vt


def jacobi_svd_full(w: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Full decomposition w == u @ diag(sigma) @ vt with min(m, n) triplets.

    sigma comes back sorted nonincreasing; u columns and vt rows are
    orthonormal; the largest-magnitude entry of each u column is
    nonnegative.
    """
    if w.ndim != 2:
        raise ShapeError("decomposition input must be 2-D")
    if not np.isfinite(w).all():
        raise ValidationError("decomposition input contains non-finite values")
    m, n = w.shape
    if m >= n:
        u, sigma, vt = _svd_tall(w, tol, max_sweeps)
    else:
        ut, sigma, vtt = _svd_tall(w.T.copy(), tol, max_sweeps)
        u, vt = vtt.T.copy(), ut.T.copy()

    # Sign convention: flip triplets so each u column's peak entry is >= 0.
    for j in range(sigma.size):
        peak = np.argmax(np.abs(u[:, j]))
        if u[peak, j] < 0:
            u[:, j] = -u[:, j]
            vt[j, :] = -vt[j, :]
    return u, sigma, vt


_SKETCH_MIN_DIM = 128  # below this the exact path is already fast
_SKETCH_OVERSAMPLE = 8
_SKETCH_POWER_ITERS = 2


def _orth_columns(y: np.ndarray) -> np.ndarray:
    """Deterministic MGS orthonormalization with reorthogonalization;
    dependent columns are replaced by a basis completion."""
    y = y.astype(np.float64).copy()
    m, k = y.shape
    q = np.zeros((m, k), dtype=np.float64)
    for j in range(k):
        col = y[:, j]
        for _ in range(2):
            if j:
                col = col - q[:, :j] @ (q[:, :j].T @ col)
        norm = np.linalg.norm(col)
        scale = max(np.linalg.norm(y[:, j]), 1.0)
        if norm > 1e-12 * scale:
            q[:, j] = col / norm
        else:
            q[:, j] = _complete_column(q, j)
    return q


def _sketched_svd(w: np.ndarray, r: int, tol: float, max_sweeps: int):
    """Randomized range finder + exact Jacobi on the projected matrix.

    The Gaussian test matrix comes from a fixed shape-derived seed, so the
    result is a pure function of the input. Subspace iterations sharpen the
    range estimate enough for the downstream quantization stages, whose
    error dwarfs the sketch suboptimality.
    """
    m, n = w.shape
    k = min(min(m, n), r + _SKETCH_OVERSAMPLE)
    rng = Prng(0x53564431 ^ (m * 1000003 + n * 1009 + k))
    omega = rng.gauss_matrix(n, k).astype(np.float64)
    w64 = w.astype(np.float64)
    q = _orth_columns(w64 @ omega)
    for _ in range(_SKETCH_POWER_ITERS):
        q = _orth_columns(w64.T @ q)
        q = _orth_columns(w64 @ q)
    b = q.T @ w64  # (k, n)
    ub_t, sigma, vtb_t = _svd_tall(b.T.copy(), tol, max_sweeps)
    u = q @ vtb_t.T  # (m, k)
    vt = ub_t.T  # (k, n)
    for j in range(k):
        peak = np.argmax(np.abs(u[:, j]))
        if u[peak, j] < 0:
            u[:, j] = -u[:, j]
            vt[j, :] = -vt[j, :]
    return u[:, :r], sigma[:r], vt[:r, :]


def truncated_svd(w: np.ndarray, policy: RankPolicy) -> SvdResult:
    """Top-R triplets of `w` under the given rank policy.

    Fixed small ranks on large matrices go through the randomized-subspace
    accelerated path; everything else (small inputs, wide ranks, energy
    policies that need the full spectrum) uses the exact Jacobi reference.
    """
    min_dim = min(w.shape)
    if policy.mode == "fixed":
        r = int(policy.value)
        if r > min_dim:
            raise ValidationError(f"rank {r} exceeds min dimension {min_dim}")
        if min_dim >= _SKETCH_MIN_DIM and r <= min_dim // 4:
            if not np.isfinite(w).all():
                raise ValidationError("decomposition input contains non-finite values")
            u, sigma, vt = _sketched_svd(w, r, JACOBI_TOL, JACOBI_MAX_SWEEPS)
            return SvdResult(u.astype(np.float32), sigma.copy(), vt.astype(np.float32))
        u, sigma, vt = jacobi_svd_full(w)
    else:
        u, sigma, vt = jacobi_svd_full(w)
        total = float(np.sum(sigma**2))
        if total == 0.0:
            r = 1
        else:
            cum = np.cumsum(sigma**2)
            r = int(np.searchsorted(cum, policy.value * total - 1e-18) + 1)
            r = min(r, min_dim)
    return SvdResult(u[:, :r].astype(np.float32), sigma[:r].copy(), vt[:r, :].astype(np.float32))


def split_factors(svd: SvdResult) -> tuple[np.ndarray, np.ndarray]:
    """Energy-balanced factors: A = U sqrt(S), B = sqrt(S) V^T."""
    if (svd.sigma < 0).any():
        raise ValidationError("singular values must be nonnegative")
    root = np.sqrt(svd.sigma)
    a = (svd.u.astype(np.float64) * root[None, :]).astype(np.float32)
    b = (root[:, None] * svd.vt.astype(np.float64)).astype(np.float32)
    return a, b

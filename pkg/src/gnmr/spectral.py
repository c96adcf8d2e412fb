"""Balanced SVD factorization and spectral initialization for completion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import svds

from .model import FactorPair, LowRankMatrix, thin_svd
from .operators import SamplingPattern
from .rng import stream


@dataclass(frozen=True)
class InitConfig:
    rank: int
    mu: Optional[float] = None
    scale_by_inverse_p: bool = True
    p: Optional[float] = None

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be positive")
        if self.mu is not None and not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.p is not None and not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")


@dataclass(frozen=True)
class InitResult:
    z: FactorPair
    singular_values: np.ndarray
    degenerate: bool
    clipped_rows: int = 0


def _fix_signs(a: np.ndarray, b: np.ndarray):
    # make the largest-magnitude entry of each left singular vector positive
    idx = np.argmax(np.abs(a), axis=0)
    sgn = np.sign(a[idx, np.arange(a.shape[1])])
    sgn[sgn == 0] = 1.0
    return a * sgn, b * sgn


def truncated_svd(x, r: int, tol: float = 1e-10):
    """Top-r singular triplets ``(Ubar, s, Vbar)``, s descending, with canonical signs.

    Factored input goes through QR + core SVD; sparse input through ARPACK
    (implicitly restarted Lanczos) from a fixed start vector; dense input
    through LAPACK.
    """
    if isinstance(x, (LowRankMatrix, FactorPair)):
        f = x.factors if isinstance(x, LowRankMatrix) else x
        if r > min(f.shape):
            raise ValueError(f"rank {r} exceeds matrix dimensions {f.shape}")
        a, s, b = thin_svd(f.u, f.v)
        k = min(r, s.size)
        a, s, b = a[:, :k], s[:k], b[:, :k]
        if k < r:
            pad = r - k
            a = np.hstack([a, np.zeros((a.shape[0], pad))])
            b = np.hstack([b, np.zeros((b.shape[0], pad))])
            s = np.concatenate([s, np.zeros(pad)])
    else:
        n1, n2 = x.shape
        if r > min(n1, n2):
            raise ValueError(f"rank {r} exceeds matrix dimensions {(n1, n2)}")
        if sp.issparse(x) and r < min(n1, n2) - 1:
            v0 = stream(0, "svd").standard_normal(min(n1, n2))
            a, s, bt = svds(sp.csr_matrix(x), k=r, tol=tol, v0=v0, solver="arpack")
            order = np.argsort(s)[::-1]
            a, s, b = a[:, order], s[order], bt[order].T
        else:
            xd = x.toarray() if sp.issparse(x) else np.asarray(x, dtype=np.float64)
            try:
                a, s, bt = np.linalg.svd(xd, full_matrices=False)
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError(f"SVD did not converge: {exc}") from exc
            a, s, b = a[:, :r], s[:r], bt[:r].T
    a, b = _fix_signs(a, b)
    return a, s, b


def bsvd(x, r: int) -> FactorPair:
    """``(Ubar Sigma^1/2, Vbar Sigma^1/2)`` from the rank-r truncated SVD of ``x``."""
    a, s, b = truncated_svd(x, r)
    root = np.sqrt(np.maximum(s, 0.0))
    return FactorPair(a * root, b * root)


def observed_matrix(pattern: SamplingPattern, b: np.ndarray, p: Optional[float] = None) -> sp.csr_matrix:
    """Zero-filled observed matrix, divided by ``p`` when given."""
    mat = pattern.adjoint(b)
    return mat / p if p is not None else mat


def _degenerate(s: np.ndarray, shape) -> bool:
    if s.size == 0 or s[0] == 0:
        return True
    return bool(s[-1] <= max(shape) * np.finfo(float).eps * s[0])


def clip_rows(z: FactorPair, mu: float) -> tuple[FactorPair, int]:
    """Scale rows ``i`` by ``1 / max(1, sqrt(n/(2 mu r)) ||Z_i|| / ||Z||_2)``, n = max(n1, n2)."""
    stacked = z.stacked()
    n = max(z.n1, z.n2)
    spec = np.linalg.norm(stacked, 2)
    if spec == 0:
        return z, 0
    factor = math.sqrt(n / (2.0 * mu * z.rank)) * np.linalg.norm(stacked, axis=1) / spec
    hit = factor > 1.0
    out = stacked.copy()
    out[hit] = stacked[hit] / factor[hit, None]
    return FactorPair.from_stacked(out, z.n1), int(hit.sum())


def spectral_init(pattern: SamplingPattern, b: np.ndarray, cfg: InitConfig) -> InitResult:
    """b-SVD of the zero-filled observations, optionally 1/p-scaled and row-clipped."""
    p = None
    if cfg.scale_by_inverse_p:
        p = cfg.p if cfg.p is not None else pattern.fraction
    x = observed_matrix(pattern, b, p)
    a, s, bb = truncated_svd(x, cfg.rank)
    root = np.sqrt(np.maximum(s, 0.0))
    z = FactorPair(a * root, bb * root)
    clipped = 0
    if cfg.mu is not None:
        z, clipped = clip_rows(z, cfg.mu)
    return InitResult(z=z, singular_values=s, degenerate=_degenerate(s, pattern.shape),
                      clipped_rows=clipped)


def estimate_sigma_r(pattern: SamplingPattern, b: np.ndarray, r: int, p: float) -> float:
    """``sigma_r(X / p)`` of the zero-filled observed matrix."""
    if not p > 0:
        raise ValueError("p must be positive")
    _, s, _ = truncated_svd(observed_matrix(pattern, b, p), r)
    if _degenerate(s, pattern.shape):
        raise ValueError(f"observed matrix has fewer than {r} nonzero singular values")
    return float(s[r - 1])

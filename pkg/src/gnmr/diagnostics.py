"""Error metrics, balance/incoherence measures, Procrustes distance and an empirical RIP probe."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import FactorPair, LowRankMatrix, Matrixish, as_factors, dense, frobenius_error, thin_svd
from .operators import MeasurementModel
from .rng import stream

SUCCESS_THRESHOLD = 1e-4


def _norm(x: Matrixish) -> float:
    f = as_factors(x)
    return LowRankMatrix(f).norm() if f is not None else float(np.linalg.norm(x))


def rel_rmse(estimate: Matrixish, truth: Matrixish) -> float:
    """``||X_hat - X*||_F / ||X*||_F``."""
    denom = _norm(truth)
    if denom == 0:
        raise ValueError("relative error against a zero matrix is undefined")
    return frobenius_error(estimate, truth) / denom


def recovery_success(estimate: Matrixish, truth: Matrixish, threshold: float = SUCCESS_THRESHOLD) -> bool:
    return rel_rmse(estimate, truth) <= threshold


def balance(z: FactorPair) -> float:
    """Imbalance ``||U^T U - V^T V||_F``."""
    return float(np.linalg.norm(z.u.T @ z.u - z.v.T @ z.v))


def _svd_factors(x: Matrixish):
    f = as_factors(x)
    if f is not None:
        a, s, b = thin_svd(f.u, f.v)
    else:
        a, s, bt = np.linalg.svd(dense(x), full_matrices=False)
        b = bt.T
    if s.size == 0 or s[0] == 0:
        raise ValueError("incoherence of the zero matrix is undefined")
    k = int(np.sum(s > max(a.shape[0], b.shape[0]) * np.finfo(float).eps * s[0]))
    return a[:, :k], s[:k], b[:, :k]


def incoherence_mu(x: Matrixish) -> float:
    """Smallest mu with ``||Ubar||_{2,inf}^2 <= mu r/n1`` and ``||Vbar||_{2,inf}^2 <= mu r/n2``."""
    a, s, b = _svd_factors(x)
    r = s.size
    n1, n2 = a.shape[0], b.shape[0]
    return float(max(n1 * np.max(np.sum(a * a, axis=1)), n2 * np.max(np.sum(b * b, axis=1))) / r)


def procrustes_distance(z1, z2) -> tuple[float, np.ndarray]:
    """``min_P ||Z1 - Z2 P||_F`` over orthogonal P, and the minimizing P.

    Arguments are FactorPairs or stacked (n, r) arrays. P = W Q^T where
    ``Z2^T Z1 = W S Q^T``.
    """
    a = z1.stacked() if isinstance(z1, FactorPair) else np.asarray(z1, dtype=np.float64)
    b = z2.stacked() if isinstance(z2, FactorPair) else np.asarray(z2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    w, _, qt = np.linalg.svd(b.T @ a)
    p = w @ qt
    return float(np.linalg.norm(a - b @ p)), p


def rip_probe(model: MeasurementModel, rank: int, trials: int, seed: int = 0,
              kind: str = "gaussian") -> tuple[float, float]:
    """Empirical ``(min, max)`` of ``||A(X)||^2 - 1`` over random unit-norm rank-``rank`` X.

    ``kind="gaussian"`` uses normalized products of Gaussian factors,
    ``kind="spiky"`` uses single-entry matrices. Sampling can only find a lower
    bound on the true restricted isometry constant.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n1, n2 = model.shape
    rng = stream(seed, "probe")
    ratios = np.empty(trials)
    for k in range(trials):
        if kind == "gaussian":
            f = FactorPair(rng.standard_normal((n1, rank)), rng.standard_normal((n2, rank)))
            x = LowRankMatrix(f)
            c = 1.0 / x.norm()
            x = LowRankMatrix(FactorPair(c * f.u, f.v))
        elif kind == "spiky":
            u = np.zeros((n1, 1))
            v = np.zeros((n2, 1))
            u[rng.integers(n1), 0] = 1.0
            v[rng.integers(n2), 0] = 1.0
            x = LowRankMatrix(FactorPair(u, v))
        else:
            raise ValueError(f"unknown probe kind {kind!r}")
        y = model.apply(x)
        ratios[k] = float(y @ y) / x.norm() ** 2
    return float(ratios.min() - 1.0), float(ratios.max() - 1.0)


def rip_delta(probe: tuple[float, float]) -> float:
    """Scalar lower estimate ``max(-lo, hi)`` of the isometry constant."""
    lo, hi = probe
    return max(-lo, hi, 0.0)


@dataclass(frozen=True)
class NeighborhoodReport:
    err_ratio: float
    bln_ratio: float
    row_norm_ratio_u: float
    row_norm_ratio_v: float
    lsv_ratio: float

    def in_err(self, eps: float) -> bool:
        return self.err_ratio <= eps

    def in_bln(self, delta: float) -> bool:
        return self.bln_ratio <= delta

    def in_mu(self) -> bool:
        return self.row_norm_ratio_u <= 1.0 and self.row_norm_ratio_v <= 1.0

    def lines(self) -> list[str]:
        return [f"{k}={getattr(self, k)!r}" for k in
                ("err_ratio", "bln_ratio", "row_norm_ratio_u", "row_norm_ratio_v", "lsv_ratio")]


def neighborhood_report(z: FactorPair, truth: LowRankMatrix, mu: Optional[float] = None) -> NeighborhoodReport:
    """Ratios whose thresholds define the error, balance and row-norm neighborhoods of ``X*``."""
    s = truth.spectrum
    s1, sr = float(s[0]), float(s[-1])
    if mu is None:
        mu = incoherence_mu(truth)
    r = truth.rank
    n1, n2 = z.shape
    ru = np.sqrt(np.max(np.sum(z.u ** 2, axis=1))) / math.sqrt(3 * mu * r * s1 / n1)
    rv = np.sqrt(np.max(np.sum(z.v ** 2, axis=1))) / math.sqrt(3 * mu * r * s1 / n2)
    lsv = max(np.linalg.norm(z.u, 2), np.linalg.norm(z.v, 2)) / math.sqrt(s1)
    return NeighborhoodReport(
        err_ratio=frobenius_error(z, truth) / sr,
        bln_ratio=balance(z) / sr,
        row_norm_ratio_u=float(ru),
        row_norm_ratio_v=float(rv),
        lsv_ratio=float(lsv),
    )

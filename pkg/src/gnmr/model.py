"""Core value types: factor pairs, implicit low-rank matrices, configs and traces."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING, Optional, Union

import numpy as np

if TYPE_CHECKING:
    from .operators import MeasurementModel


@dataclass(frozen=True)
class FactorPair:
    """Stacked factors ``Z = (U; V)`` with ``U`` of shape (n1, r) and ``V`` of shape (n2, r)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or v.ndim != 2:
            raise ValueError("factors must be 2-d arrays")
        if u.shape[1] != v.shape[1]:
            raise ValueError(f"column mismatch: U has {u.shape[1]}, V has {v.shape[1]}")
        r = u.shape[1]
        if r < 1:
            raise ValueError("rank must be >= 1")
        if u.shape[0] < r or v.shape[0] < r:
            raise ValueError(f"factor shapes {u.shape}, {v.shape} cannot carry rank {r}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def n1(self) -> int:
        return self.u.shape[0]

    @property
    def n2(self) -> int:
        return self.v.shape[0]

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n1, self.n2)

    def stacked(self) -> np.ndarray:
        return np.vstack([self.u, self.v])

    def flat(self) -> np.ndarray:
        """Vectorization used by the inner solver: U row-major, then V row-major."""
        return np.concatenate([self.u.ravel(), self.v.ravel()])

    @classmethod
    def from_flat(cls, x: np.ndarray, n1: int, n2: int, r: int) -> "FactorPair":
        x = np.asarray(x, dtype=np.float64)
        if x.shape != ((n1 + n2) * r,):
            raise ValueError(f"flat vector has length {x.size}, expected {(n1 + n2) * r}")
        return cls(x[: n1 * r].reshape(n1, r), x[n1 * r:].reshape(n2, r))

    @classmethod
    def from_stacked(cls, z: np.ndarray, n1: int) -> "FactorPair":
        return cls(z[:n1], z[n1:])

    @classmethod
    def zeros(cls, n1: int, n2: int, r: int) -> "FactorPair":
        return cls(np.zeros((n1, r)), np.zeros((n2, r)))

    def norm(self) -> float:
        """Frobenius norm of the stacked matrix."""
        return math.sqrt(float(np.sum(self.u * self.u) + np.sum(self.v * self.v)))

    def scaled(self, c: float) -> "FactorPair":
        return FactorPair(c * self.u, c * self.v)

    def __add__(self, other: "FactorPair") -> "FactorPair":
        return FactorPair(self.u + other.u, self.v + other.v)

    def __sub__(self, other: "FactorPair") -> "FactorPair":
        return FactorPair(self.u - other.u, self.v - other.v)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v)))


@dataclass(frozen=True)
class LowRankMatrix:
    """The matrix ``U V^T`` held in factored form.

    The dense product is only formed by :func:`dense`. ``spectrum`` may be
    supplied when known (e.g. by construction); otherwise it is computed on
    first access from a QR/core-SVD of the factors.
    """

    factors: FactorPair
    spectrum_hint: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.factors.shape

    @property
    def rank(self) -> int:
        return self.factors.rank

    @cached_property
    def _svd(self):
        return thin_svd(self.factors.u, self.factors.v)

    @cached_property
    def spectrum(self) -> np.ndarray:
        if self.spectrum_hint is not None:
            return np.asarray(self.spectrum_hint, dtype=np.float64)
        return self._svd[1]

    def svd(self):
        """Thin SVD ``(Ubar, s, Vbar)`` of the product, r columns, s descending."""
        return self._svd

    def norm(self) -> float:
        return _product_norm(self.factors.u, self.factors.v)


Matrixish = Union[LowRankMatrix, FactorPair, np.ndarray]


def thin_svd(u: np.ndarray, v: np.ndarray):
    """SVD of ``u @ v.T`` computed as QR of each factor plus a core SVD."""
    qu, ru = np.linalg.qr(u)
    qv, rv = np.linalg.qr(v)
    a, s, bt = np.linalg.svd(ru @ rv.T)
    return qu @ a, s, qv @ bt.T


def _product_norm(u: np.ndarray, v: np.ndarray) -> float:
    # ||U V^T||_F = ||R_u R_v^T||_F; stays accurate where the Gram trace would cancel
    ru = np.linalg.qr(u, mode="r")
    rv = np.linalg.qr(v, mode="r")
    return float(np.linalg.norm(ru @ rv.T))


def as_factors(x: Matrixish) -> Optional[FactorPair]:
    if isinstance(x, LowRankMatrix):
        return x.factors
    if isinstance(x, FactorPair):
        return x
    return None


def dense(x: Matrixish) -> np.ndarray:
    """Materialize ``U V^T`` (or return a dense input as float64)."""
    f = as_factors(x)
    if f is None:
        return np.asarray(x, dtype=np.float64)
    n1, n2 = f.shape
    try:
        return f.u @ f.v.T
    except MemoryError as exc:
        raise MemoryError(f"cannot densify a {n1}x{n2} matrix") from exc


def shape_of(x: Matrixish) -> tuple[int, int]:
    f = as_factors(x)
    if f is not None:
        return f.shape
    return tuple(np.shape(x))


def frobenius_error(a: Matrixish, b: Matrixish) -> float:
    """``||A - B||_F``; no dense product when both arguments are factored."""
    if shape_of(a) != shape_of(b):
        raise ValueError(f"shape mismatch: {shape_of(a)} vs {shape_of(b)}")
    fa, fb = as_factors(a), as_factors(b)
    if fa is not None and fb is not None:
        if np.array_equal(fa.u, fb.u) and np.array_equal(fa.v, fb.v):
            return 0.0
        return _product_norm(np.hstack([fa.u, fb.u]), np.hstack([fa.v, -fb.v]))
    return float(np.linalg.norm(dense(a) - dense(b)))


@dataclass
class StoppingCriteria:
    """Early-stopping thresholds; a criterion with its flag off never fires."""

    eps_rmse: float = 1e-14
    eps_diff: float = 1e-14
    window_len: int = 200
    window_ratio: float = 0.5
    use_rmse: bool = True
    use_diff: bool = True
    use_window: bool = True

    def __post_init__(self):
        if self.eps_rmse < 0 or self.eps_diff < 0:
            raise ValueError("stopping thresholds must be nonnegative")
        if self.window_len < 1:
            raise ValueError("window_len must be positive")
        if not 0 < self.window_ratio <= 1:
            raise ValueError("window_ratio must lie in (0, 1]")

    @classmethod
    def disabled(cls) -> "StoppingCriteria":
        return cls(use_rmse=False, use_diff=False, use_window=False)


@dataclass
class GnmrConfig:
    rank: int
    alpha: float = 1.0
    max_outer: int = 100
    max_inner: int = 1500
    inner_tol: float = 1e-12
    balancing: bool = False
    stopping: StoppingCriteria = field(default_factory=StoppingCriteria)

    def __post_init__(self):
        if not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if self.rank < 1 or self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("rank and iteration budgets must be positive")
        if not self.inner_tol > 0:
            raise ValueError("inner_tol must be positive")


@dataclass
class ProblemInstance:
    truth: LowRankMatrix
    model: "MeasurementModel"
    b: np.ndarray
    noise_sigma: float = 0.0
    seed: int = 0
    kappa: float = 1.0
    mu: float = float("nan")
    rho: float = float("nan")

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.b.shape != (self.model.m,):
            raise ValueError(f"observations have length {self.b.size}, model expects {self.model.m}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")

    @property
    def rank(self) -> int:
        return self.truth.rank


TRACE_COLUMNS = ("t", "obs_residual", "rel_rmse", "balance", "sigma_min_u",
                 "sigma_min_v", "kernel_defect", "inner_iters")


@dataclass
class IterationRecord:
    t: int
    obs_residual: float
    rel_rmse: float
    balance: float
    sigma_min_u: float
    sigma_min_v: float
    kernel_defect: float
    inner_iters: int
    # not serialized; abs_error is for the estimate, factor_error for U_t V_t^T
    rel_change: float = float("nan")
    abs_error: float = float("nan")
    factor_error: float = float("nan")
    degenerate_anchor: bool = False


@dataclass
class IterationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    stop_reason: Optional[str] = None
    converged: bool = False

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def append(self, rec: IterationRecord) -> None:
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(rec, name) for rec in self.records], dtype=float)

    @property
    def degenerate_anchor(self) -> bool:
        return any(rec.degenerate_anchor for rec in self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for rec in self.records:
            w.writerow([rec.t] + [repr(float(getattr(rec, c))) for c in TRACE_COLUMNS[1:-1]]
                       + [rec.inner_iters])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "IterationTrace":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != TRACE_COLUMNS:
            raise ValueError("unexpected trace header")
        trace = cls()
        for row in rows[1:]:
            trace.append(IterationRecord(int(row[0]), *map(float, row[1:-1]), int(row[-1])))
        return trace

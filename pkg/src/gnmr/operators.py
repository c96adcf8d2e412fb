"""Measurement operators ``A: R^{n1 x n2} -> R^m`` and the GNMR linearization."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .model import FactorPair, LowRankMatrix, Matrixish, as_factors, dense, shape_of
from .rng import stream

EXPLICIT_LIMIT = 2 ** 26
_BLOCK = 256


class MeasurementModel:
    """Common interface; concrete models are :class:`SamplingPattern` and :class:`GaussianEnsemble`."""

    n1: int
    n2: int
    m: int

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n1, self.n2)

    def _check_shape(self, x: Matrixish) -> None:
        if shape_of(x) != self.shape:
            raise ValueError(f"expected a {self.shape} matrix, got {shape_of(x)}")

    def _check_len(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.m,):
            raise ValueError(f"expected a vector of length {self.m}, got shape {y.shape}")
        return y

    def apply(self, x: Matrixish) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, y: np.ndarray):
        raise NotImplementedError


class SamplingPattern(MeasurementModel):
    """Entrywise sampling ``P_Omega``; entries kept in lexicographic (row, col) order."""

    def __init__(self, n1: int, n2: int, rows, cols):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        if n1 < 1 or n2 < 1:
            raise ValueError("dimensions must be positive")
        if rows.shape != cols.shape:
            raise ValueError("row and column index arrays differ in length")
        if rows.size and (rows.min() < 0 or rows.max() >= n1 or cols.min() < 0 or cols.max() >= n2):
            raise ValueError("sampled entry out of range")
        key = rows * n2 + cols
        order = np.argsort(key, kind="stable")
        key = key[order]
        if np.any(np.diff(key) == 0):
            raise ValueError("duplicate entries in sampling pattern")
        self.n1, self.n2 = int(n1), int(n2)
        self.rows = rows[order]
        self.cols = cols[order]
        self.m = int(self.rows.size)
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(self.rows, minlength=n1))])
        for a in (self.rows, self.cols, self.indptr):
            a.flags.writeable = False

    @classmethod
    def full(cls, n1: int, n2: int) -> "SamplingPattern":
        r, c = np.divmod(np.arange(n1 * n2), n2)
        return cls(n1, n2, r, c)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "SamplingPattern":
        r, c = np.nonzero(mask)
        return cls(mask.shape[0], mask.shape[1], r, c)

    def entries(self) -> list[tuple[int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist()))

    def mask(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        out[self.rows, self.cols] = True
        return out

    @property
    def fraction(self) -> float:
        return self.m / (self.n1 * self.n2)

    def row_counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def col_counts(self) -> np.ndarray:
        return np.bincount(self.cols, minlength=self.n2)

    def apply(self, x: Matrixish) -> np.ndarray:
        self._check_shape(x)
        f = as_factors(x)
        if f is not None:
            return np.einsum("ij,ij->i", f.u[self.rows], f.v[self.cols])
        return np.asarray(x, dtype=np.float64)[self.rows, self.cols]

    def adjoint(self, y: np.ndarray) -> sp.csr_matrix:
        """Zero-filled matrix with ``y`` placed on the pattern (sparse)."""
        y = self._check_len(y)
        return sp.csr_matrix((y, self.cols, self.indptr), shape=self.shape)

    def __eq__(self, other) -> bool:
        return (isinstance(other, SamplingPattern) and self.shape == other.shape
                and np.array_equal(self.rows, other.rows) and np.array_equal(self.cols, other.cols))

    def __repr__(self) -> str:
        return f"SamplingPattern(n1={self.n1}, n2={self.n2}, m={self.m})"


class GaussianEnsemble(MeasurementModel):
    """``[A(X)]_i = trace(A_i^T X) / sqrt(m)`` with i.i.d. N(0,1) entries in each ``A_i``.

    Rows are generated in blocks of 256 from the (seed, "gaussian", block)
    stream, so explicit and streamed storage produce identical operators.
    """

    def __init__(self, n1: int, n2: int, m: int, seed: int = 0, storage: str = "auto"):
        if min(n1, n2, m) < 1:
            raise ValueError("dimensions must be positive")
        if storage == "auto":
            storage = "explicit" if m * n1 * n2 <= EXPLICIT_LIMIT else "streamed"
        if storage not in ("explicit", "streamed"):
            raise ValueError(f"unknown storage policy {storage!r}")
        self.n1, self.n2, self.m, self.seed = int(n1), int(n2), int(m), int(seed)
        self.storage = storage
        self._scale = 1.0 / math.sqrt(m)
        self._matrix: Optional[np.ndarray] = None
        if storage == "explicit":
            self._matrix = np.vstack([blk for _, blk in self._blocks()])
            self._matrix.flags.writeable = False

    def _blocks(self):
        d = self.n1 * self.n2
        for k, start in enumerate(range(0, self.m, _BLOCK)):
            stop = min(start + _BLOCK, self.m)
            yield start, stream(self.seed, "gaussian", k).standard_normal((stop - start, d))

    def measurement_matrices(self) -> np.ndarray:
        """All ``A_i`` as an (m, n1, n2) array (unscaled)."""
        if self._matrix is not None:
            return self._matrix.reshape(self.m, self.n1, self.n2)
        return np.vstack([blk for _, blk in self._blocks()]).reshape(self.m, self.n1, self.n2)

    def apply(self, x: Matrixish) -> np.ndarray:
        self._check_shape(x)
        vec = dense(x).ravel()
        if self._matrix is not None:
            return self._scale * (self._matrix @ vec)
        out = np.empty(self.m)
        for start, blk in self._blocks():
            out[start:start + blk.shape[0]] = blk @ vec
        return self._scale * out

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = self._check_len(y)
        if self._matrix is not None:
            vec = self._matrix.T @ y
        else:
            vec = np.zeros(self.n1 * self.n2)
            for start, blk in self._blocks():
                vec += blk.T @ y[start:start + blk.shape[0]]
        return self._scale * vec.reshape(self.n1, self.n2)

    def __repr__(self) -> str:
        return f"GaussianEnsemble(n1={self.n1}, n2={self.n2}, m={self.m}, seed={self.seed}, storage={self.storage!r})"


def apply(model: MeasurementModel, x: Matrixish) -> np.ndarray:
    return model.apply(x)


def adjoint(model: MeasurementModel, y: np.ndarray):
    return model.adjoint(y)


class LinearizedOperator:
    """``Z = (U; V) -> A(U_t V^T + U V_t^T)`` anchored at ``(U_t, V_t)``."""

    def __init__(self, anchor: FactorPair, model: MeasurementModel):
        if anchor.shape != model.shape:
            raise ValueError(f"anchor shape {anchor.shape} does not match model {model.shape}")
        self.anchor = anchor
        self.model = model
        self.n1, self.n2, self.r = anchor.n1, anchor.n2, anchor.rank
        self.m = model.m
        self.n = (self.n1 + self.n2) * self.r
        self._jac = None
        self._jac_t = None
        if isinstance(model, SamplingPattern):
            # row k of the Jacobian holds V_t[j] in U-block row i and U_t[i] in V-block row j
            r = self.r
            lane = np.arange(r)
            ucols = (model.rows[:, None] * r + lane).ravel()
            vcols = (self.n1 * r + model.cols[:, None] * r + lane).ravel()
            data = np.hstack([anchor.v[model.cols], anchor.u[model.rows]]).ravel()
            idx = np.hstack([ucols.reshape(-1, r), vcols.reshape(-1, r)]).ravel()
            indptr = np.arange(0, 2 * r * self.m + 1, 2 * r)
            self._jac = sp.csr_matrix((data, idx, indptr), shape=(self.m, self.n))
            self._jac_t = self._jac.T.tocsr()
        elif isinstance(model, GaussianEnsemble) and model.storage == "explicit":
            a = model.measurement_matrices()
            ju = (a @ anchor.v).reshape(self.m, -1)
            jv = np.einsum("ijk,jl->ikl", a, anchor.u).reshape(self.m, -1)
            self._jac = model._scale * np.hstack([ju, jv])

    def _check_z(self, z: FactorPair) -> None:
        if z.u.shape != self.anchor.u.shape or z.v.shape != self.anchor.v.shape:
            raise ValueError("factor pair dimensions do not match the anchor")

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Action on the flat vectorization (see :meth:`FactorPair.flat`)."""
        if self._jac is not None:
            return self._jac @ x
        n1r = self.n1 * self.r
        u = x[:n1r].reshape(self.n1, self.r)
        v = x[n1r:].reshape(self.n2, self.r)
        return self.model.apply(self.anchor.u @ v.T + u @ self.anchor.v.T)

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        if self._jac_t is not None:
            return self._jac_t @ y
        if self._jac is not None:
            return self._jac.T @ y
        mat = self.model.adjoint(y)
        return np.concatenate([(mat @ self.anchor.v).ravel(), (mat.T @ self.anchor.u).ravel()])

    def apply(self, z: FactorPair) -> np.ndarray:
        self._check_z(z)
        return self.matvec(z.flat())

    def adjoint(self, y: np.ndarray) -> FactorPair:
        y = self.model._check_len(y)
        return FactorPair.from_flat(self.rmatvec(y), self.n1, self.n2, self.r)

    def anchor_value(self) -> np.ndarray:
        """``A(U_t V_t^T)``."""
        return self.model.apply(LowRankMatrix(self.anchor))


def linearized_apply(op: LinearizedOperator, z: FactorPair) -> np.ndarray:
    return op.apply(z)


def linearized_adjoint(op: LinearizedOperator, y: np.ndarray) -> FactorPair:
    return op.adjoint(y)


def rhs_for_alpha(op: LinearizedOperator, b: np.ndarray, alpha: float) -> np.ndarray:
    """Right-hand side ``b + alpha * A(U_t V_t^T)`` of the variant-``alpha`` subproblem."""
    b = op.model._check_len(b)
    if alpha == 0:
        return b.copy()
    return b + alpha * op.anchor_value()


# -- text formats -------------------------------------------------------------

def format_pattern(pattern: SamplingPattern, values: Optional[np.ndarray] = None) -> str:
    lines = [f"{pattern.n1} {pattern.n2} {pattern.m}"]
    if values is None:
        lines += [f"{i} {j}" for i, j in zip(pattern.rows.tolist(), pattern.cols.tolist())]
    else:
        values = pattern._check_len(values)
        lines += [f"{i} {j} {float(x)!r}"
                  for i, j, x in zip(pattern.rows.tolist(), pattern.cols.tolist(), values.tolist())]
    return "\n".join(lines) + "\n"


def parse_pattern(text: str) -> tuple[SamplingPattern, Optional[np.ndarray]]:
    """Parse a pattern file; returns the observations too when a third column is present."""
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not lines or len(lines[0]) != 3:
        raise ValueError("pattern header must read 'n1 n2 m'")
    n1, n2, m = map(int, lines[0])
    body = lines[1:]
    if len(body) != m:
        raise ValueError(f"header announces {m} entries, found {len(body)}")
    if m == 0:
        return SamplingPattern(n1, n2, [], []), None
    width = {len(row) for row in body}
    if width not in ({2}, {3}):
        raise ValueError("pattern lines must all have 2 (i j) or 3 (i j value) fields")
    rows = np.array([int(row[0]) for row in body], dtype=np.int64)
    cols = np.array([int(row[1]) for row in body], dtype=np.int64)
    key = rows * n2 + cols
    if np.any(np.diff(key) <= 0):
        raise ValueError("pattern entries must be sorted and duplicate-free")
    pattern = SamplingPattern(n1, n2, rows, cols)
    values = np.array([float(row[2]) for row in body]) if width == {3} else None
    return pattern, values


def write_pattern(path, pattern: SamplingPattern, values: Optional[np.ndarray] = None) -> None:
    Path(path).write_text(format_pattern(pattern, values))


def read_pattern(path) -> tuple[SamplingPattern, Optional[np.ndarray]]:
    return parse_pattern(Path(path).read_text())

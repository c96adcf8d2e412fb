"""The outer GNMR iteration for any variant alpha, with optional SVD balancing."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .diagnostics import balance
from .model import (FactorPair, GnmrConfig, IterationRecord, IterationTrace, LowRankMatrix,
                    StoppingCriteria, frobenius_error, thin_svd)
from .operators import LinearizedOperator, MeasurementModel, rhs_for_alpha
from .solver import SolverError, solve_min_norm

VARIANTS = {"updating": -1.0, "averaging": 0.0, "setting": 1.0}


def parse_variant(text: str) -> float:
    """'updating' | 'averaging' | 'setting' | 'alpha=<x>' -> alpha."""
    if text in VARIANTS:
        return VARIANTS[text]
    if text.startswith("alpha="):
        alpha = float(text[len("alpha="):])
        if math.isfinite(alpha):
            return alpha
    raise ValueError(f"unknown variant {text!r}")


def variant_name(alpha: float, balancing: bool = False) -> str:
    name = next((k for k, v in VARIANTS.items() if v == alpha), f"alpha={alpha!r}")
    return name + ("+bal" if balancing else "")


@dataclass(frozen=True)
class GnmrState:
    z: FactorPair
    t: int = 0
    last_tilde: Optional[FactorPair] = None
    last_anchor: Optional[FactorPair] = None
    estimate: Optional[LowRankMatrix] = None

    def current_estimate(self, alpha: float) -> LowRankMatrix:
        """X_hat_t: rank-r projection of the latest linearized estimate (or of U_0 V_0^T)."""
        if self.estimate is not None:
            return self.estimate
        if self.last_tilde is not None:
            return final_estimate(self.last_anchor, self.last_tilde, alpha, self.z.rank)
        return truncate(self.z, self.z.rank)


def balance_factors(z: FactorPair) -> FactorPair:
    """b-SVD of ``U V^T`` computed from the factors (QR of each, SVD of the r x r core)."""
    a, s, b = thin_svd(z.u, z.v)
    root = np.sqrt(s)
    return FactorPair(a * root, b * root)


def _sigma_min(a: np.ndarray) -> float:
    return float(np.linalg.svd(a, compute_uv=False)[-1])


def _is_degenerate(z: FactorPair) -> bool:
    eps = np.finfo(float).eps
    su = np.linalg.svd(z.u, compute_uv=False)
    sv = np.linalg.svd(z.v, compute_uv=False)
    return bool(su[-1] <= eps * max(su[0], 1e-300) * z.n1 or sv[-1] <= eps * max(sv[0], 1e-300) * z.n2)


def observed_residual(z, model: MeasurementModel, b: np.ndarray) -> float:
    nb = float(np.linalg.norm(b))
    res = float(np.linalg.norm(model.apply(z) - b))
    return res / nb if nb > 0 else res


def make_record(t: int, z: FactorPair, model: MeasurementModel, b: np.ndarray,
                truth: Optional[LowRankMatrix] = None, prev: Optional[LowRankMatrix] = None,
                kernel_defect: float = float("nan"), inner_iters: int = 0,
                degenerate: bool = False, estimate: Optional[LowRankMatrix] = None) -> IterationRecord:
    """Trace row for iterate ``z``.

    Residual, error and relative change are measured on ``estimate`` (X_hat_t,
    defaults to ``U V^T``); balance and the sigma_min columns on the factors.
    For the setting variant the factors may oscillate between two points while
    X_hat_t converges, so the matrix quantities must not come from ``U V^T``.
    """
    x = estimate if estimate is not None else LowRankMatrix(z)
    abs_err = rel = fac_err = float("nan")
    if truth is not None:
        fac_err = frobenius_error(z, truth)
        abs_err = frobenius_error(x, truth)
        rel = abs_err / truth.norm()
    change = float("nan")
    if prev is not None:
        base = prev.norm()
        change = frobenius_error(x, prev) / base if base > 0 else float("inf")
    return IterationRecord(
        t=t,
        obs_residual=observed_residual(x, model, b),
        rel_rmse=rel,
        balance=balance(z),
        sigma_min_u=_sigma_min(z.u),
        sigma_min_v=_sigma_min(z.v),
        kernel_defect=kernel_defect,
        inner_iters=inner_iters,
        rel_change=change,
        abs_error=abs_err,
        factor_error=fac_err,
        degenerate_anchor=degenerate,
    )


def gnmr_step(state: GnmrState, model: MeasurementModel, b: np.ndarray, cfg: GnmrConfig,
              truth: Optional[LowRankMatrix] = None) -> tuple[GnmrState, IterationRecord]:
    """One outer iteration: (balance,) minimal-norm solve, then the alpha-update."""
    z = state.z
    if not z.is_finite():
        raise SolverError("non-finite factors")
    anchor = balance_factors(z) if cfg.balancing else z
    degenerate = _is_degenerate(anchor)
    op = LinearizedOperator(anchor, model)
    rep = solve_min_norm(op, rhs_for_alpha(op, b, cfg.alpha), cfg.max_inner, cfg.inner_tol)
    tilde = rep.solution
    z_next = anchor.scaled(0.5 * (1.0 - cfg.alpha)) + tilde
    if not z_next.is_finite():
        raise SolverError("non-finite iterate")
    est = final_estimate(anchor, tilde, cfg.alpha, cfg.rank)
    rec = make_record(state.t + 1, z_next, model, b, truth, prev=state.current_estimate(cfg.alpha),
                      kernel_defect=rep.kernel_defect, inner_iters=rep.iterations,
                      degenerate=degenerate, estimate=est)
    return GnmrState(z=z_next, t=state.t + 1, last_tilde=tilde, last_anchor=anchor, estimate=est), rec


def check_stopping(records: Sequence[IterationRecord], criteria: StoppingCriteria) -> Optional[str]:
    """First triggered criterion among 'rmse', 'diff', 'window', else None."""
    if not records:
        raise ValueError("need at least one trace record")
    last = records[-1]
    if criteria.use_rmse and last.obs_residual <= criteria.eps_rmse:
        return "rmse"
    if criteria.use_diff and not math.isnan(last.rel_change) and last.rel_change <= criteria.eps_diff:
        return "diff"
    if criteria.use_window:
        n = criteria.window_len
        res = [rec.obs_residual for rec in records]
        mins = [min(res[i:i + n]) for i in range(0, len(res) - n + 1, n)]
        for prev, cur in zip(mins, mins[1:]):
            if prev > 0 and cur / prev > criteria.window_ratio:
                return "window"
    return None


def final_estimate(anchor: FactorPair, tilde: FactorPair, alpha: float, r: int) -> LowRankMatrix:
    """Best rank-r approximation of ``U_a V~^T + U~ V_a^T - alpha U_a V_a^T``.

    Works on the rank-<=3r factorization ``[U_a | U~ | U_a] [V~ | V_a | -alpha V_a]^T``.
    """
    left = np.hstack([anchor.u, tilde.u, anchor.u])
    right = np.hstack([tilde.v, anchor.v, -alpha * anchor.v])
    a, s, b = thin_svd(left, right)
    s = s[:r]
    root = np.sqrt(s)
    return LowRankMatrix(FactorPair(a[:, :r] * root, b[:, :r] * root), spectrum_hint=s)


def truncate(z: FactorPair, r: int) -> LowRankMatrix:
    a, s, b = thin_svd(z.u, z.v)
    root = np.sqrt(s[:r])
    return LowRankMatrix(FactorPair(a[:, :r] * root, b[:, :r] * root), spectrum_hint=s[:r])


def run_gnmr(z0: FactorPair, model: MeasurementModel, b: np.ndarray, cfg: GnmrConfig,
             truth: Optional[LowRankMatrix] = None) -> tuple[LowRankMatrix, IterationTrace]:
    """Iterate :func:`gnmr_step` until a stopping criterion fires or ``max_outer`` steps.

    A :class:`SolverError` raised mid-run carries the partial trace as ``exc.trace``.
    """
    if z0.shape != model.shape or z0.rank != cfg.rank:
        raise ValueError(f"initialization {z0.shape} rank {z0.rank} does not match "
                         f"model {model.shape} rank {cfg.rank}")
    b = np.asarray(b, dtype=np.float64)
    trace = IterationTrace()
    trace.append(make_record(0, z0, model, b, truth, estimate=truncate(z0, cfg.rank)))
    crit = cfg.stopping
    if crit.use_rmse and trace[0].obs_residual <= crit.eps_rmse:
        # initialization already fits: return its rank-r truncation
        trace.stop_reason, trace.converged = "rmse", True
        return truncate(z0, cfg.rank), trace

    state = GnmrState(z=z0)
    for _ in range(cfg.max_outer):
        try:
            state, rec = gnmr_step(state, model, b, cfg, truth)
        except SolverError as exc:
            exc.trace = trace
            raise
        trace.append(rec)
        reason = check_stopping(trace.records, crit)
        if reason is not None:
            trace.stop_reason = reason
            trace.converged = reason in ("rmse", "diff")
            break
    return state.current_estimate(cfg.alpha), trace

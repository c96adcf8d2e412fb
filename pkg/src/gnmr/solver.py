"""Minimal-norm least squares for the linearized subproblem.

LSQR (Golub-Kahan bidiagonalization) run against ``matvec``/``rmatvec``.
Started from zero, its iterates stay in the row space of the operator, so the
limit is the minimum-norm least-squares solution even though the operator has
a kernel of dimension at least r^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import FactorPair
from .operators import LinearizedOperator


class SolverError(FloatingPointError):
    """Non-finite values during an inner solve (e.g. an all-zero anchor blowing up)."""


@dataclass
class SolveReport:
    solution: FactorPair
    iterations: int
    normal_residual: float
    converged: bool
    residual_norm: float = float("nan")
    kernel_defect: float = float("nan")
    certified: bool = True
    restarted: bool = False
    op_norm: float = float("nan")
    residual_history: list = field(default_factory=list, repr=False)


@dataclass
class LsqrResult:
    x: np.ndarray
    iterations: int
    converged: bool
    history: list


def lsqr(matvec: Callable, rmatvec: Callable, b: np.ndarray, n: int, max_iter: int,
         tol: float, scale: float = 1.0) -> LsqrResult:
    """Paige-Saunders LSQR with zero damping, started at ``x = 0``.

    Stops once the recurrence estimate of ``||A^T r||`` falls below
    ``tol * scale * ||A^T b||``, or below ``tol * scale * ||r||`` (the usual
    least-squares test; without it an inconsistent system whose ``A^T b`` is
    already tiny would iterate past the Krylov limit and diverge). ``history``
    holds the residual-norm estimates ``||b - A x_k||`` (nonincreasing by
    construction).
    """
    x = np.zeros(n)
    beta = float(np.linalg.norm(b))
    if beta == 0.0:
        return LsqrResult(x, 0, True, [0.0])
    u = b / beta
    v = rmatvec(u)
    alpha = float(np.linalg.norm(v))
    if not math.isfinite(alpha):
        raise SolverError("non-finite value in first adjoint application")
    history = [beta]
    if alpha == 0.0:
        return LsqrResult(x, 0, True, history)
    v = v / alpha
    w = v.copy()
    phibar, rhobar = beta, alpha
    target = tol * scale * alpha * beta
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        u = matvec(v) - alpha * u
        beta = float(np.linalg.norm(u))
        if beta > 0:
            u /= beta
        v = rmatvec(u) - beta * v
        alpha = float(np.linalg.norm(v))
        if alpha > 0:
            v /= alpha
        if not (math.isfinite(alpha) and math.isfinite(beta)):
            raise SolverError(f"non-finite value at LSQR iteration {it}")

        rho = math.hypot(rhobar, beta)
        c, s = rhobar / rho, beta / rho
        theta = s * alpha
        rhobar = -c * alpha
        phi = c * phibar
        phibar = s * phibar
        x += (phi / rho) * w
        w = v - (theta / rho) * w
        history.append(phibar)

        arnorm = phibar * alpha * abs(c)
        if arnorm <= target or arnorm <= tol * scale * phibar or phibar == 0.0 or alpha == 0.0:
            converged = True
            break
    return LsqrResult(x, it, converged, history)


def estimate_norm(op: LinearizedOperator, iters: int = 5) -> float:
    """Spectral norm of ``op`` from a few power iterations on ``op^T op``."""
    x = np.cos(np.arange(op.n) * 0.7071 + 0.3)  # fixed start, generic direction
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = op.rmatvec(op.matvec(x))
        lam = float(np.linalg.norm(y))
        if lam == 0.0 or not math.isfinite(lam):
            break
        x = y / lam
    return math.sqrt(lam)


def kernel_defect(sol: FactorPair, anchor: FactorPair) -> float:
    """``||U~^T U_t - V_t^T V~||_F``; zero for anything orthogonal to ``{(U_t R, -V_t R^T)}``."""
    return float(np.linalg.norm(sol.u.T @ anchor.u - anchor.v.T @ sol.v))


def project_out_kernel(sol: FactorPair, anchor: FactorPair) -> FactorPair:
    """Remove the component of ``sol`` along ``{(U_t R, -V_t R^T)}``.

    Minimizes ``||U - U_t R||^2 + ||V + V_t R^T||^2`` over R, i.e. solves
    ``G_u R + R G_v = U_t^T U - V^T V_t`` (least squares if singular).
    """
    r = anchor.rank
    gu = anchor.u.T @ anchor.u
    gv = anchor.v.T @ anchor.v
    rhs = anchor.u.T @ sol.u - sol.v.T @ anchor.v
    # row-major vec: vec(G_u R) = (G_u kron I) vec R, vec(R G_v) = (I kron G_v^T) vec R
    k = np.kron(gu, np.eye(r)) + np.kron(np.eye(r), gv.T)
    rr = np.linalg.lstsq(k, rhs.ravel(), rcond=None)[0].reshape(r, r)
    return FactorPair(sol.u - anchor.u @ rr, sol.v + anchor.v @ rr.T)


def solve_min_norm(op: LinearizedOperator, rhs: np.ndarray, max_inner: int = 1500,
                   inner_tol: float = 1e-12) -> SolveReport:
    """Minimal-norm minimizer of ``||op(Z) - rhs||``.

    If the kernel-orthogonality certificate fails after the first pass, the
    iterate is projected off the anchor's kernel directions and LSQR is
    restarted from zero on the remaining residual (once).
    """
    if not inner_tol > 0:
        raise ValueError("inner_tol must be positive")
    rhs = op.model._check_len(rhs)
    if not np.all(np.isfinite(rhs)):
        raise SolverError("non-finite right-hand side")
    anchor = op.anchor
    if not anchor.is_finite():
        raise SolverError("non-finite anchor")

    scale = estimate_norm(op)
    res = lsqr(op.matvec, op.rmatvec, rhs, op.n, max_inner, inner_tol, scale)
    iterations, history = res.iterations, list(res.history)
    sol = FactorPair.from_flat(res.x, op.n1, op.n2, op.r)

    bound_factor = 10.0 * inner_tol * anchor.norm()
    defect = kernel_defect(sol, anchor)
    restarted = False
    if defect > bound_factor * sol.norm():
        restarted = True
        # the removed directions lie in ker(op), so the fit is unchanged
        sol = project_out_kernel(sol, anchor)
        if iterations < max_inner:
            resid = rhs - op.matvec(sol.flat())
            extra = lsqr(op.matvec, op.rmatvec, resid, op.n, max_inner - iterations, inner_tol, scale)
            sol = sol + FactorPair.from_flat(extra.x, op.n1, op.n2, op.r)
            iterations += extra.iterations
            history += extra.history[1:]
        defect = kernel_defect(sol, anchor)

    if not sol.is_finite():
        raise SolverError("non-finite solution")
    x = sol.flat()
    r = rhs - op.matvec(x)
    atr = float(np.linalg.norm(op.rmatvec(r)))
    atb = float(np.linalg.norm(op.rmatvec(rhs)))
    rnorm = float(np.linalg.norm(r))
    rel = atr / atb if atb > 0 else 0.0
    converged = atr <= inner_tol * scale * max(atb, rnorm) or atb == 0.0
    return SolveReport(
        solution=sol,
        iterations=iterations,
        normal_residual=rel,
        converged=bool(converged),
        residual_norm=rnorm,
        kernel_defect=defect,
        certified=bool(defect <= bound_factor * sol.norm()),
        restarted=restarted,
        op_norm=scale,
        residual_history=history,
    )

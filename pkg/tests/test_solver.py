import numpy as np
import pytest
from hypothesis import given, strategies as st

from gnmr.model import FactorPair, dense, frobenius_error
from gnmr.operators import GaussianEnsemble, LinearizedOperator, SamplingPattern, rhs_for_alpha
from gnmr.solver import (SolverError, estimate_norm, kernel_defect, lsqr, project_out_kernel,
                         solve_min_norm)
from gnmr.diagnostics import rip_delta, rip_probe
from gnmr.probgen import sensing_instance
from gnmr.rng import stream
from gnmr.spectral import bsvd

from conftest import make_model, random_pair
from test_operators import explicit_linearized


def pinv_solution(op, rhs):
    mat = explicit_linearized(op.model, op.anchor)
    return np.linalg.pinv(mat, rcond=1e-10) @ rhs


def test_lsqr_toy_min_norm():
    res = lsqr(lambda x: np.array([x[0] + x[1]]), lambda y: np.array([y[0], y[0]]),
               np.array([2.0]), 2, 10, 1e-14)
    assert np.allclose(res.x, [1.0, 1.0], rtol=1e-14)
    assert res.converged


def test_identity_like_anchor_places_rhs():
    # U_t = [I; 0], V_t = 0: op(U, V) = U_t V^T, so the solution is U = 0 and V^T = top block of rhs
    n1, n2, r = 4, 3, 3
    anchor = FactorPair(np.vstack([np.eye(r), np.zeros((n1 - r, r))]), np.zeros((n2, r)))
    pat = SamplingPattern.full(n1, n2)
    op = LinearizedOperator(anchor, pat)
    target = np.zeros((n1, n2))
    target[:r] = np.random.default_rng(0).standard_normal((r, n2))
    rep = solve_min_norm(op, target.ravel(), 100, 1e-13)
    assert np.allclose(rep.solution.u, 0.0, atol=1e-13)
    assert np.allclose(rep.solution.v.T, target[:r], rtol=1e-12, atol=1e-13)
    assert rep.converged


@pytest.mark.parametrize("kind", ["pattern", "gaussian"])
def test_matches_pseudoinverse_6x5(kind):
    rng = np.random.default_rng(3)
    anchor = random_pair(rng, 6, 5, 2)
    model = make_model(kind, rng, 6, 5, frac=0.8, m_factor=4.0, seed=5)
    op = LinearizedOperator(anchor, model)
    rhs = op.apply(random_pair(rng, 6, 5, 2))  # consistent
    rep = solve_min_norm(op, rhs, 1500, 1e-12)
    want = pinv_solution(op, rhs)
    assert np.linalg.norm(rep.solution.flat() - want) <= 1e-8 * np.linalg.norm(want)
    assert rep.certified and rep.converged
    assert rep.iterations <= 1500


@given(st.sampled_from(["pattern", "gaussian"]), st.integers(1, 3), st.booleans(),
       st.booleans(), st.integers(0, 10_000))
def test_min_norm_property(kind, r, consistent, deficient, seed):
    rng = np.random.default_rng(seed)
    n1 = r + int(rng.integers(1, 5))
    n2 = r + int(rng.integers(1, 5))
    anchor = random_pair(rng, n1, n2, r)
    if deficient and r > 1:
        anchor = FactorPair(anchor.u.copy(), anchor.v.copy())
        anchor.u[:, -1] = anchor.u[:, 0]
    model = make_model(kind, rng, n1, n2, frac=0.7, m_factor=3.0, seed=seed)
    op = LinearizedOperator(anchor, model)
    rhs = op.apply(random_pair(rng, n1, n2, r)) if consistent else rng.standard_normal(model.m)
    rep = solve_min_norm(op, rhs, 1500, 1e-12)
    want = pinv_solution(op, rhs)
    scale = max(np.linalg.norm(want), 1e-300)
    assert np.linalg.norm(rep.solution.flat() - want) <= 1e-6 * scale
    assert rep.kernel_defect <= 10 * 1e-12 * rep.solution.norm() * anchor.norm() or rep.solution.norm() == 0


def test_residual_history_nonincreasing():
    rng = np.random.default_rng(4)
    anchor = random_pair(rng, 10, 8, 2)
    g = GaussianEnsemble(10, 8, 80, seed=1)
    op = LinearizedOperator(anchor, g)
    rep = solve_min_norm(op, rng.standard_normal(80), 1500, 1e-12)
    h = np.array(rep.residual_history)
    assert np.all(np.diff(h) <= 1e-12 * h[0])


def test_budget_exhaustion_is_not_an_error():
    rng = np.random.default_rng(5)
    anchor = random_pair(rng, 12, 10, 3)
    op = LinearizedOperator(anchor, GaussianEnsemble(12, 10, 100, seed=2))
    rep = solve_min_norm(op, rng.standard_normal(100), 3, 1e-14)
    assert rep.iterations <= 3
    assert not rep.converged


def test_nonfinite_inputs_raise():
    rng = np.random.default_rng(6)
    anchor = random_pair(rng, 4, 3, 1)
    op = LinearizedOperator(anchor, SamplingPattern.full(4, 3))
    bad = np.ones(12)
    bad[3] = np.nan
    with pytest.raises(SolverError):
        solve_min_norm(op, bad)
    u = anchor.u.copy()
    u[0, 0] = np.inf
    with pytest.raises(SolverError):
        solve_min_norm(LinearizedOperator(FactorPair(u, anchor.v), SamplingPattern.full(4, 3)), np.ones(12))
    with pytest.raises(ValueError):
        solve_min_norm(op, np.ones(12), inner_tol=0.0)


def test_zero_anchor_returns_zero():
    op = LinearizedOperator(FactorPair.zeros(3, 3, 1), SamplingPattern.full(3, 3))
    rep = solve_min_norm(op, np.ones(9))
    assert rep.solution.norm() == 0.0


def test_project_out_kernel_removes_kernel_component():
    rng = np.random.default_rng(7)
    anchor = random_pair(rng, 6, 5, 2)
    base = random_pair(rng, 6, 5, 2)
    rr = rng.standard_normal((2, 2))
    z = base + FactorPair(anchor.u @ rr, -anchor.v @ rr.T)
    p = project_out_kernel(z, anchor)
    assert kernel_defect(p, anchor) <= 1e-12 * p.norm() * anchor.norm()
    op = LinearizedOperator(anchor, SamplingPattern.full(6, 5))
    assert np.allclose(op.apply(p), op.apply(z), atol=1e-12)


def test_estimate_norm_close_to_spectral_norm():
    rng = np.random.default_rng(8)
    anchor = random_pair(rng, 6, 5, 2)
    op = LinearizedOperator(anchor, SamplingPattern.full(6, 5))
    exact = np.linalg.norm(explicit_linearized(op.model, anchor), 2)
    est = estimate_norm(op)
    assert 0.5 * exact <= est <= exact * (1 + 1e-12)


def test_norm_bound_of_updating_step():
    # ||dZ_t||^2 <= (1+d)/(1-d) e_t^2 / min(sigma_r(U_t), sigma_r(V_t))^2, with 1.2x slack
    n, r = 40, 3
    worst = 0.0
    for seed in range(6):
        inst = sensing_instance(n, n, r, 10.0, 6 * n * r, seed)
        x = inst.truth
        delta = rip_delta(rip_probe(inst.model, 2 * r, 200, seed=seed))
        e = stream(seed, "perturb").standard_normal((n, n))
        e *= 0.3 * x.spectrum[-1] / np.linalg.norm(e)
        z = bsvd(dense(x) + e, r)
        z = FactorPair(1.2 * z.u, z.v / 1.2)
        op = LinearizedOperator(z, inst.model)
        rep = solve_min_norm(op, rhs_for_alpha(op, inst.b, -1.0))
        et = frobenius_error(z, x)
        smin = min(np.linalg.svd(z.u, compute_uv=False)[-1], np.linalg.svd(z.v, compute_uv=False)[-1])
        bound = (1 + delta) / (1 - delta) * et ** 2 / smin ** 2
        worst = max(worst, rep.solution.norm() ** 2 / bound)
    assert worst <= 1.2

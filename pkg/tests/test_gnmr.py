import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gnmr.algorithm import (GnmrState, balance_factors, check_stopping, final_estimate, gnmr_step,
                            parse_variant, run_gnmr, variant_name)
from gnmr.diagnostics import balance, rel_rmse, rip_delta, rip_probe
from gnmr.model import (FactorPair, GnmrConfig, IterationRecord, LowRankMatrix, StoppingCriteria,
                        dense, frobenius_error)
from gnmr.operators import SamplingPattern
from gnmr.probgen import SpectrumSpec, random_low_rank, sensing_instance
from gnmr.rng import stream
from gnmr.solver import SolverError
from gnmr.spectral import bsvd

from conftest import random_pair


def exact_full(seed=0, n1=8, n2=6, r=2):
    x = random_low_rank(n1, n2, SpectrumSpec(r, 3.0), seed)
    pat = SamplingPattern.full(n1, n2)
    return x, pat, pat.apply(x)


def perturbed_sensing(seed, n=40, r=3, rel=0.05):
    inst = sensing_instance(n, n, r, 10.0, 6 * n * r, seed)
    x = inst.truth
    e = stream(seed, "perturb").standard_normal((n, n))
    e *= rel * x.spectrum[-1] / np.linalg.norm(e)
    return inst, bsvd(dense(x) + e, r)


def step(z, model, b, alpha, balancing=False):
    cfg = GnmrConfig(rank=z.rank, alpha=alpha, balancing=balancing)
    return gnmr_step(GnmrState(z), model, b, cfg)


def test_parse_variant():
    assert parse_variant("updating") == -1.0
    assert parse_variant("averaging") == 0.0
    assert parse_variant("setting") == 1.0
    assert parse_variant("alpha=0.25") == 0.25
    for bad in ("alpha=nan", "alpha=", "foo"):
        with pytest.raises(ValueError):
            parse_variant(bad)
    assert variant_name(1.0) == "setting"
    assert variant_name(0.5, True) == "alpha=0.5+bal"


def test_setting_fixed_point_at_balanced_exact_factorization():
    x, pat, b = exact_full()
    z0 = bsvd(x, 2)
    state, rec = step(z0, pat, b, 1.0)
    assert (state.z - z0).norm() <= 1e-10 * z0.norm()
    assert rec.kernel_defect <= 1e-10


def test_updating_stationary_at_imbalanced_exact_factorization():
    x, pat, b = exact_full(1)
    zs = bsvd(x, 2)
    z0 = FactorPair(2.0 * zs.u, zs.v / 2.0)  # Q = 2 I
    state, _ = step(z0, pat, b, -1.0)
    assert (state.z - z0).norm() <= 1e-10 * z0.norm()


def test_setting_moves_imbalanced_start_toward_balance():
    x, pat, b = exact_full(1)
    zs = bsvd(x, 2)
    z0 = FactorPair(2.0 * zs.u, zs.v / 2.0)
    state, rec = step(z0, pat, b, 1.0)
    assert (state.z - z0).norm() > 1e-3 * z0.norm()
    assert balance(state.z) < balance(z0)
    assert rec.balance == balance(state.z)


@pytest.mark.parametrize("alpha", [-1.0, 0.0, 1.0, 0.5])
def test_variant_consistency_at_zero_residual_balanced_point(alpha):
    for seed in range(3):
        inst = sensing_instance(12, 10, 2, 4.0, 200, seed)
        z0 = bsvd(inst.truth, 2)
        state, _ = step(z0, inst.model, inst.b, alpha)
        assert (state.z - z0).norm() <= 1e-10 * z0.norm()


def test_balance_factors_examples():
    rng = np.random.default_rng(0)
    u = rng.standard_normal((7, 1))
    u /= np.linalg.norm(u)
    v = rng.standard_normal((5, 1))
    v /= np.linalg.norm(v)
    out = balance_factors(FactorPair(2 * u, v / 2))
    sgn = np.sign(out.u[0, 0] / u[0, 0])
    assert np.allclose(out.u, sgn * u, atol=1e-14) and np.allclose(out.v, sgn * v, atol=1e-14)

    z = random_pair(rng, 8, 6, 3)
    out = balance_factors(z)
    s1 = np.linalg.svd(dense(z), compute_uv=False)[0]
    assert np.allclose(dense(out), dense(z), atol=1e-12 * s1)
    assert balance(out) <= 1e-12 * s1

    again = balance_factors(out)
    assert np.allclose(dense(again), dense(out), atol=1e-12 * s1)


@given(st.integers(1, 4), st.integers(0, 10_000))
def test_balance_factors_identities(r, seed):
    rng = np.random.default_rng(seed)
    z = random_pair(rng, r + 3, r + 2, r)
    out = balance_factors(z)
    s = np.linalg.svd(dense(z), compute_uv=False)
    assert balance(out) <= 1e-12 * s[0]
    sz = np.linalg.svd(out.stacked(), compute_uv=False)
    assert math.isclose(sz[r - 1] ** 2, 2 * s[r - 1], rel_tol=1e-10)


def test_balance_factors_rank_deficient_gives_zero_columns():
    rng = np.random.default_rng(1)
    u = rng.standard_normal((6, 1))
    z = FactorPair(np.hstack([u, u]), rng.standard_normal((5, 2)))
    out = balance_factors(z)
    assert np.linalg.norm(out.u[:, 1]) <= 1e-7 * np.linalg.norm(out.u[:, 0])


def test_run_exact_balanced_start_full_observation():
    x, pat, b = exact_full(2)
    est, trace = run_gnmr(bsvd(x, 2), pat, b, GnmrConfig(rank=2, alpha=1.0), truth=x)
    assert trace.converged
    assert len(trace) - 1 <= 1
    assert rel_rmse(est, x) <= 1e-12


def test_check_stopping_examples():
    def rec(t, res, change=float("nan")):
        return IterationRecord(t, res, float("nan"), 0.0, 1.0, 1.0, 0.0, 0, rel_change=change)

    assert check_stopping([rec(0, 0.0)], StoppingCriteria()) == "rmse"
    assert check_stopping([rec(0, 1.0), rec(1, 1.0, 1e-16)], StoppingCriteria()) == "diff"
    crit = StoppingCriteria(window_len=5, window_ratio=0.5)
    flat = [rec(t, 0.3) for t in range(10)]
    assert check_stopping(flat[:9], crit) is None
    assert check_stopping(flat, crit) == "window"
    falling = [rec(t, 0.1 ** t) for t in range(10)]
    assert check_stopping(falling, crit) is None
    assert check_stopping([rec(0, 0.0, 0.0)] + flat, StoppingCriteria.disabled()) is None
    with pytest.raises(ValueError):
        check_stopping([], crit)


def test_disabled_criteria_run_to_budget():
    x, pat, b = exact_full(3)
    cfg = GnmrConfig(rank=2, alpha=1.0, max_outer=4, stopping=StoppingCriteria.disabled())
    _, trace = run_gnmr(bsvd(x, 2), pat, b, cfg)
    assert len(trace) == 5
    assert trace.stop_reason is None and not trace.converged


def test_trace_length_bounded_by_budget():
    inst, z0 = perturbed_sensing(0)
    cfg = GnmrConfig(rank=3, alpha=-1.0, max_outer=2)
    _, trace = run_gnmr(z0, inst.model, inst.b, cfg, truth=inst.truth)
    assert len(trace) <= 3
    assert trace[0].t == 0 and trace[-1].t == len(trace) - 1


def test_final_estimate_rank_and_formula():
    rng = np.random.default_rng(4)
    anchor, tilde = random_pair(rng, 9, 7, 2), random_pair(rng, 9, 7, 2)
    for alpha in (-1.0, 0.0, 1.0, 0.3):
        m = anchor.u @ tilde.v.T + tilde.u @ anchor.v.T - alpha * anchor.u @ anchor.v.T
        a, s, bt = np.linalg.svd(m)
        best = (a[:, :2] * s[:2]) @ bt[:2]
        est = final_estimate(anchor, tilde, alpha, 2)
        assert est.rank == 2
        assert np.allclose(dense(est), best, atol=1e-12 * s[0])
        assert np.allclose(est.spectrum, s[:2], rtol=1e-12)


def test_final_estimate_matches_iterate_on_converged_runs():
    checked = 0
    for alpha in (-1.0, 0.0, 1.0):
        for bal in (False, True):
            for seed in range(3):
                inst, z0 = perturbed_sensing(seed)
                cfg = GnmrConfig(rank=3, alpha=alpha, balancing=bal, max_outer=30)
                est, trace = run_gnmr(z0, inst.model, inst.b, cfg)
                if not trace.converged:
                    continue
                state = GnmrState(z0)
                for _ in range(len(trace) - 1):
                    state, _ = gnmr_step(state, inst.model, inst.b, cfg)
                assert frobenius_error(est, LowRankMatrix(state.z)) <= 1e-8 * est.norm()
                checked += 1
    assert checked >= 6


def test_implicit_balance_bound_updating_variant():
    # l_{t+1} <= l_t + 1.2 (1+d)/(1-d) e_t^2 / min(sigma_r(U_t), sigma_r(V_t))^2
    for seed in range(5):
        inst, z0 = perturbed_sensing(seed, rel=0.3)
        z0 = FactorPair(1.2 * z0.u, z0.v / 1.2)
        delta = rip_delta(rip_probe(inst.model, 6, 200, seed=seed))
        cfg = GnmrConfig(rank=3, alpha=-1.0, max_outer=6, stopping=StoppingCriteria.disabled())
        _, trace = run_gnmr(z0, inst.model, inst.b, cfg, truth=inst.truth)
        for prev, cur in zip(trace.records, trace.records[1:]):
            smin = min(prev.sigma_min_u, prev.sigma_min_v)
            growth = 1.2 * (1 + delta) / (1 - delta) * prev.factor_error ** 2 / smin ** 2
            roundoff = 1e-13 * inst.truth.spectrum[0]
            assert cur.balance <= prev.balance + growth + roundoff


def test_degenerate_anchor_is_flagged_not_fatal():
    x, pat, b = exact_full(5, r=2)
    z = bsvd(x, 2)
    z0 = FactorPair(np.hstack([z.u[:, :1], z.u[:, :1]]), np.hstack([z.v[:, :1], z.v[:, :1]]))
    cfg = GnmrConfig(rank=2, alpha=1.0, max_outer=2, stopping=StoppingCriteria.disabled())
    _, trace = run_gnmr(z0, pat, b, cfg)
    assert trace.degenerate_anchor
    assert all(np.isfinite(trace.column("obs_residual")))


def test_solver_failure_carries_partial_trace():
    x, pat, b = exact_full(6)
    bad = b.copy()
    bad[0] = np.inf
    with pytest.raises(SolverError) as info:
        run_gnmr(bsvd(x, 2), pat, bad, GnmrConfig(rank=2, stopping=StoppingCriteria.disabled()))
    assert len(info.value.trace) == 1


def test_run_rejects_mismatched_init():
    x, pat, b = exact_full(7)
    with pytest.raises(ValueError):
        run_gnmr(bsvd(x, 1), pat, b, GnmrConfig(rank=2))


def test_setting_variant_factors_may_cycle_while_estimate_converges():
    # alpha=1 from an imbalanced exact factorization: the factors keep moving,
    # every linearized estimate stays exact
    x, pat, b = exact_full(8)
    zs = bsvd(x, 2)
    z = FactorPair(2.0 * zs.u, zs.v / 2.0)
    cfg = GnmrConfig(rank=2, alpha=1.0, max_outer=6, stopping=StoppingCriteria.disabled())
    est, trace = run_gnmr(z, pat, b, cfg, truth=x)
    assert rel_rmse(est, x) <= 1e-12
    assert max(trace.column("rel_rmse")) <= 1e-12

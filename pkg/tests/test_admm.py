import math
import warnings
from dataclasses import asdict

import numpy as np
import pytest

from conftest import quadratic_problem
from spideradmm.admm import (
    CompositeProblem,
    HyperParams,
    IterateState,
    SolverKind,
    derive_hyperparams,
    resolve_batch_sizes,
    run,
    update_x,
    update_y_block,
    update_z,
    x_update_residual,
)
from spideradmm.bench import build_graph_problem, synthetic_binary
from spideradmm.errors import DivergenceError, HyperparameterError
from spideradmm.linalg import DenseOperator, ScaledIdentity
from spideradmm.losses import QuadraticLoss, SigmoidLoss
from spideradmm.regularizers import L1, Zero


def _records(trace):
    return [{k: v for k, v in asdict(r).items() if k != "seconds"} for r in trace.records]


def test_derive_spider_example(quad_problem):
    sp = derive_hyperparams(quad_problem, HyperParams(lipschitz=3.0, sigmaA=(1.0, 1.0)), "spider")
    assert sp.eta == pytest.approx(2.0 / 9.0, rel=1e-15)
    assert sp.rho == pytest.approx(3.0 * math.sqrt(170.0), rel=1e-15)
    assert sp.r == pytest.approx(sp.rho * sp.eta + 1.0)
    assert sp.kappa_G == 1.0 and sp.sigmaG_min == pytest.approx(1.0)


def test_derive_svrg_and_saga_examples(quad_problem):
    hp = HyperParams(lipschitz=1.0, sigmaA=(1.0, 1.0))
    sv = derive_hyperparams(quad_problem, hp, "svrg")
    assert sv.eta == pytest.approx(1.0 / 15.0 * 3.0, rel=1e-15)
    assert sv.rho == pytest.approx(2.0 * math.sqrt(231.0), rel=1e-15)
    sa = derive_hyperparams(quad_problem, hp, "saga")
    assert sa.eta == pytest.approx(1.0 / 17.0)
    assert sa.rho == pytest.approx(2.0 * math.sqrt(2031.0))


def test_derive_alpha_scaling(quad_problem):
    hp = HyperParams(alpha=0.5, lipschitz=2.0, sigmaA=(4.0, 4.0))
    sp = derive_hyperparams(quad_problem, hp, "spider")
    assert sp.eta == pytest.approx((2.0 / 3.0) * 0.5 / 2.0)
    assert sp.rho == pytest.approx(math.sqrt(170.0) * 2.0 / (4.0 * 0.5))


def test_derive_override_passthrough(quad_problem):
    sp = derive_hyperparams(quad_problem, HyperParams(rho=7.5, eta=0.01), "saga")
    assert sp.rho == 7.5 and sp.eta == 0.01


def test_sgd_step_scaled(quad_problem):
    base = derive_hyperparams(quad_problem, HyperParams(), "spider")
    sgd = derive_hyperparams(quad_problem, HyperParams(), "sgd")
    assert sgd.eta == pytest.approx(0.1 * base.eta)


def test_rank_deficient_A_rejected(quad_problem):
    with pytest.raises(HyperparameterError):
        derive_hyperparams(quad_problem, HyperParams(sigmaA=(0.0, 1.0)), "spider")
    # an explicit penalty sidesteps the derivation
    derive_hyperparams(quad_problem, HyperParams(sigmaA=(0.0, 1.0), rho=1.0), "spider")


def test_hyperparams_validation():
    for bad in (dict(alpha=0.0), dict(alpha=1.5), dict(rho=-1.0), dict(K=-1), dict(init="zeros")):
        with pytest.raises(ValueError):
            HyperParams(**bad)


def test_default_batch_sizes():
    hp = HyperParams()
    s = resolve_batch_sizes(hp, "spider", 1000)
    assert (s.b, s.q) == (32, 32)
    v = resolve_batch_sizes(hp, "svrg", 1000)
    assert (v.b, v.M) == (100, 10)
    assert resolve_batch_sizes(hp, "saga", 1000).b == 100
    o = resolve_batch_sizes(hp, "spider-online", 100)
    assert (o.b1, o.b2, o.q) == (100, 10, 10)
    assert resolve_batch_sizes(hp, "deterministic", 50).q == 1


def test_theory_rho_converges_for_well_conditioned_A(quad_problem):
    sp = derive_hyperparams(quad_problem, HyperParams(theory_rho=True), "spider")
    assert sp.theory_rho_converged is True
    # kappa_A = 1 makes kappa_G = 1, so the fixed point is the bootstrap value
    assert sp.kappa_G == pytest.approx(1.0)


def test_theory_rho_warns_when_fixed_point_missing(graph_problem):
    with pytest.warns(UserWarning, match="did not converge"):
        sp = derive_hyperparams(graph_problem, HyperParams(theory_rho=True), "spider")
    assert sp.theory_rho_converged is False
    boot = derive_hyperparams(graph_problem, HyperParams(), "spider")
    assert sp.rho == boot.rho


def _dense_problem(seed=3):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((6, 4))
    B1 = rng.standard_normal((6, 6))
    B2 = rng.standard_normal((6, 3))
    loss = QuadraticLoss(rng.standard_normal((5, 4)))
    c = rng.standard_normal(6)
    return CompositeProblem(loss, DenseOperator(A), [(B1, L1(0.3)), (B2, Zero())], c=c)


def _random_state(problem, seed=0):
    rng = np.random.default_rng(seed)
    return IterateState(
        x=rng.standard_normal(problem.d),
        y=[rng.standard_normal(B.cols) for B, _ in problem.blocks],
        z=rng.standard_normal(problem.l),
    )


def test_x_update_matches_dense_solve():
    p = _dense_problem()
    sp = derive_hyperparams(p, HyperParams(), "spider")
    st = _random_state(p)
    v = np.random.default_rng(9).standard_normal(p.d)
    A = p.A.to_dense()
    By = sum(B.to_dense() @ yj for (B, _), yj in zip(p.blocks, st.y))
    G = sp.r * np.eye(p.d) - sp.rho * sp.eta * A.T @ A
    lhs = G / sp.eta + sp.rho * A.T @ A
    assert np.allclose(lhs, (sp.r / sp.eta) * np.eye(p.d), atol=1e-9)
    rhs = G @ st.x / sp.eta - v + A.T @ st.z - sp.rho * A.T @ (By - p.c)
    oracle = np.linalg.solve(lhs, rhs)
    got = update_x(p, sp, st, v)
    assert np.allclose(got, oracle, rtol=1e-10, atol=1e-10)
    assert x_update_residual(p, sp, st.x, got, st.y, st.z, v) <= 1e-8


def test_y_update_solves_block_problem():
    p = _dense_problem()
    sp = derive_hyperparams(p, HyperParams(), "spider")
    st = _random_state(p, 1)
    y1 = update_y_block(p, sp, st, 0)
    B = p.blocks[0][0].to_dense()
    A = p.A.to_dense()
    r1 = sp.r_blocks[0]
    H = r1 * np.eye(B.shape[1]) - sp.rho * B.T @ B

    def obj(u):
        res = A @ st.x + B @ u + p.blocks[1][0].to_dense() @ st.y[1] - p.c
        d = u - st.y[0]
        return 0.3 * np.abs(u).sum() - st.z @ res + 0.5 * sp.rho * res @ res + 0.5 * d @ H @ d

    base = obj(y1)
    rng = np.random.default_rng(0)
    for _ in range(200):
        assert obj(y1 + 1e-4 * rng.standard_normal(y1.size)) >= base - 1e-12


def test_z_update_identity():
    p = _dense_problem()
    sp = derive_hyperparams(p, HyperParams(), "spider")
    st = _random_state(p, 2)
    res = p.A.to_dense() @ st.x + sum(B.to_dense() @ u for (B, _), u in zip(p.blocks, st.y)) - p.c
    assert np.allclose(update_z(p, sp, st), st.z - sp.rho * res, atol=1e-12)


def test_one_run_step_matches_single_updates():
    p = _dense_problem()
    hp = HyperParams(K=1, keep_history=True)
    tr = run(p, hp, "deterministic")
    h = tr.history
    st = IterateState(x=h["x"][0], y=[u.copy() for u in h["y"][0]], z=h["z"][0])
    sp = tr.spectra
    # Gauss-Seidel: block 2 sees the new block 1
    st.y[0] = update_y_block(p, sp, st, 0)
    st.y[1] = update_y_block(p, sp, st, 1)
    for got, want in zip(h["y"][1], st.y):
        assert np.allclose(got, want, atol=1e-12)
    st.x = update_x(p, sp, st, p.loss.full_grad(h["x"][0]))
    assert np.allclose(h["x"][1], st.x, atol=1e-12)
    st.z = update_z(p, sp, st)
    assert np.allclose(h["z"][1], st.z, atol=1e-12)

    jac = IterateState(x=h["x"][0], y=[u.copy() for u in h["y"][0]], z=h["z"][0])
    y2_jacobi = update_y_block(p, sp, jac, 1)
    assert not np.allclose(y2_jacobi, h["y"][1][1])


@pytest.mark.parametrize("kind,K", [("deterministic", 200), ("spider", 200), ("svrg", 200), ("saga", 1500)])
def test_quadratic_reaches_minimizer(kind, K):
    p = quadratic_problem(n=12, d=4)
    tr = run(p, HyperParams(K=K, b=12, q=3, M=3, rho=1.0, seed=1), kind)
    assert np.linalg.norm(tr.state.x - p.loss.minimizer()) <= 1e-6


def test_quadratic_with_derived_penalty():
    # the derived penalty is conservative; 200 steps leave ~4e-6, 300 are plenty
    p = quadratic_problem()
    err = lambda K: np.linalg.norm(run(p, HyperParams(K=K), "deterministic").state.x - p.loss.minimizer())
    assert err(200) <= 1e-5
    assert err(300) <= 1e-6


def test_online_quadratic_hovers_near_minimizer():
    p = quadratic_problem()
    tr = run(p, HyperParams(K=300, rho=1.0, b1=144, q=3, seed=1), "spider-online")
    # resampling keeps a noise floor of order sqrt(var / b1)
    assert np.linalg.norm(tr.state.x - p.loss.minimizer()) <= 0.5


def test_runs_are_deterministic(graph_problem):
    hp = HyperParams(K=30, seed=5)
    for kind in ("spider", "svrg", "saga", "spider-online", "sgd"):
        a, b = run(graph_problem, hp, kind), run(graph_problem, hp, kind)
        assert _records(a) == _records(b)
        assert np.array_equal(a.state.x, b.state.x)


def test_seed_changes_run(graph_problem):
    a = run(graph_problem, HyperParams(K=5, seed=0), "spider")
    b = run(graph_problem, HyperParams(K=5, seed=1), "spider")
    assert not np.array_equal(a.state.x, b.state.x)


def test_spider_q1_identical_to_deterministic(graph_problem):
    a = run(graph_problem, HyperParams(K=40, q=1, b=3, seed=2), "spider")
    b = run(graph_problem, HyperParams(K=40, seed=2), "deterministic")
    assert _records(a) == _records(b)


def test_divergence_raises(quad_problem):
    with pytest.raises(DivergenceError) as info, np.errstate(over="ignore", invalid="ignore"):
        run(quad_problem, HyperParams(K=5), "deterministic", init={"x": np.full(4, 1e308)})
    assert info.value.iteration == 1
    assert info.value.trace is not None


def test_debug_checks_pass(graph_problem):
    run(graph_problem, HyperParams(K=20, debug_checks=True), "spider")


def test_random_output_picks_a_stored_iterate(quad_problem):
    tr = run(quad_problem, HyperParams(K=10, random_output=True, seed=4), "spider")
    xs = tr.history["x"]
    assert any(np.array_equal(tr.output[0], x) for x in xs[1:])


def test_early_stop_and_callbacks(quad_problem):
    tr = run(quad_problem, HyperParams(K=50, early_stop_tol=1e300), "deterministic")
    assert len(tr.records) == 1 and tr.stopped_early
    seen = []
    tr = run(quad_problem, HyperParams(K=50), "deterministic", callbacks=[lambda k, s, r: seen.append(k) or k == 6])
    assert seen == list(range(7)) and len(tr.records) == 7


def test_trace_columns(graph_problem):
    tr = run(graph_problem, HyperParams(K=12, stationarity=True), "svrg")
    assert tr.column("iter").tolist() == list(range(1, 13))
    assert np.all(np.diff(tr.column("ifo")) > 0)
    assert np.all(tr.column("stationarity") >= 0)
    assert tr.header["solver"] == "svrg" and tr.header["faithful"]
    sg = run(graph_problem, HyperParams(K=2), "sgd")
    assert sg.header["faithful"] is False and "note" in sg.header


def test_aug_lagrangian_column_matches_diagnostic(graph_problem):
    from spideradmm.diagnostics import augmented_lagrangian

    tr = run(graph_problem, HyperParams(K=3, keep_history=True), "spider")
    h = tr.history
    want = augmented_lagrangian(graph_problem, h["x"][3], h["y"][3], h["z"][3], tr.spectra.rho)
    assert tr.records[-1].aug_lagrangian == pytest.approx(want, rel=1e-12)


def test_consistent_init_is_feasible_and_dual_matched(graph_problem):
    tr = run(graph_problem, HyperParams(K=0, init="consistent"), "spider")
    st = tr.state
    assert np.linalg.norm(graph_problem.residual(st.x, st.y)) <= 1e-10
    g = graph_problem.loss.full_grad(st.x)
    assert np.allclose(graph_problem.A.apply_t(st.z), g, atol=1e-12)


def test_init_override(quad_problem):
    x0 = np.arange(4.0)
    tr = run(quad_problem, HyperParams(K=0), "spider", init={"x": x0})
    assert np.array_equal(tr.state.x, x0)


def test_problem_validation():
    loss = QuadraticLoss(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        CompositeProblem(loss, ScaledIdentity(3), [])
    with pytest.raises(ValueError):
        CompositeProblem(loss, ScaledIdentity(3), [(ScaledIdentity(4), Zero())])
    with pytest.raises(ValueError):
        CompositeProblem(loss, ScaledIdentity(3), [(np.zeros((3, 3)), Zero())])
    with pytest.raises(TypeError):
        CompositeProblem(loss, ScaledIdentity(3), [(ScaledIdentity(3), "l1")])


def test_solver_kind_strings():
    assert str(SolverKind("spider-online")) == "spider-online"
    with pytest.raises(ValueError):
        SolverKind("adam")


def test_dual_step_equals_residual(graph_problem):
    tr = run(graph_problem, HyperParams(K=15, keep_history=True), "saga")
    h = tr.history
    for k in range(1, 16):
        res = graph_problem.residual(h["x"][k], h["y"][k])
        back = -(h["z"][k] - h["z"][k - 1]) / tr.spectra.rho
        assert np.linalg.norm(back - res) <= 1e-12 * max(1.0, np.linalg.norm(res))


@pytest.mark.xfail(
    strict=True,
    reason="residual reaches ~3e-5 by step 50 and then plateaus while x drifts on the flat "
    "sigmoid landscape; the 50->500 ratio is 0.9-2.6 across seeds",
)
def test_graph_residual_shrinks_tenfold(graph_problem):
    tr = run(graph_problem, HyperParams(K=500), "spider")
    res = tr.column("residual")
    assert res[-1] * 10 <= res[49]


def test_graph_residual_small_after_transient(graph_problem):
    tr = run(graph_problem, HyperParams(K=500), "spider")
    res = tr.column("residual")
    assert res[0] > 1.0
    assert res[-1] <= 1e-4
    assert np.all(np.isfinite(tr.column("aug_lagrangian")))

import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spideradmm import estimators as est
from spideradmm.bench import synthetic_binary
from spideradmm.linalg import SeededRng
from spideradmm.losses import GaussianQuadraticStream, QuadraticLoss, ResampleStream, SampleSet, SigmoidLoss


@pytest.fixture
def loss():
    return SigmoidLoss(synthetic_binary(64, 8, seed=4))


def _walk(rng, d, k):
    return [rng.standard_normal(d) for _ in range(k)]


def test_spider_q1_is_full_gradient(loss, rng):
    e = est.SpiderEstimator(loss, 1, 5)
    ifo = est.IfoCounter()
    for x in _walk(rng, 8, 6):
        assert np.array_equal(e.step(x, SeededRng(0, 1), ifo), loss.full_grad(x))
    assert ifo.count == 6 * 64


def test_spider_constant_point_keeps_estimate(loss, rng):
    e = est.SpiderEstimator(loss, 5, 3)
    r = SeededRng(0, 1)
    ifo = est.IfoCounter()
    x = rng.standard_normal(8)
    v0 = e.step(x, r, ifo)
    v1 = e.step(x.copy(), r, ifo)
    assert np.array_equal(v0, v1)


def test_spider_recursion_formula(loss, rng):
    e = est.SpiderEstimator(loss, 4, 3)
    x0, x1 = rng.standard_normal(8), rng.standard_normal(8)
    ifo = est.IfoCounter()
    v0 = e.step(x0, SeededRng(1, 1), ifo)
    r = SeededRng(1, 1)
    r_copy = SeededRng(1, 1)
    e2 = e.clone()
    v1 = e2.step(x1, r, ifo)
    idx = r_copy.integers(64, 3)
    manual = loss.minibatch_grad(x1, idx) - loss.minibatch_grad(x0, idx) + v0
    assert np.allclose(v1, manual, atol=1e-15)


def test_spider_refresh_schedule(loss, rng):
    e = est.SpiderEstimator(loss, 3, 2)
    ifo = est.IfoCounter()
    r = SeededRng(0, 1)
    costs = []
    for x in _walk(rng, 8, 7):
        before = ifo.count
        refresh = e.refresh_due()
        v = e.step(x, r, ifo)
        costs.append(ifo.count - before)
        if refresh:
            assert np.array_equal(v, loss.full_grad(x))
    assert costs == [64, 4, 4, 64, 4, 4, 64]


def test_spider_bad_params(loss):
    with pytest.raises(ValueError):
        est.SpiderEstimator(loss, 0, 2)


def test_online_b2_rule():
    assert est.online_b2(4) == 2
    with pytest.warns(UserWarning, match="perfect square"):
        assert est.online_b2(10) == 3
    with pytest.raises(ValueError):
        est.online_b2(0)


def test_online_rejects_inconsistent_b2(loss):
    stream = ResampleStream(loss.samples)
    with pytest.raises(ValueError):
        est.SpiderOnlineEstimator(loss, stream, 3, 4, 3)
    with pytest.raises(ValueError):
        est.SpiderOnlineEstimator(loss, stream, 3, 0)


def test_online_degenerate_stream(rng):
    one = SampleSet(rng.standard_normal((1, 3)), [1.0])
    loss = SigmoidLoss(one)
    e = est.SpiderOnlineEstimator(loss, ResampleStream(one), 3, 4)
    ifo = est.IfoCounter()
    r = SeededRng(0, 1)
    for x in _walk(rng, 3, 7):
        assert np.allclose(e.step(x, r, ifo), loss.grad(x, [0]), atol=1e-15)
    assert ifo.count == est.ifo_total_spider_online(7, 4, 3, 2)


def test_online_refresh_mse_matches_variance(rng):
    d, b1 = 4, 16
    stream = GaussianQuadraticStream(np.arange(d, dtype=float), sigma=0.8)
    loss = QuadraticLoss(np.zeros((1, d)))
    x = rng.standard_normal(d)
    truth = stream.population_grad(x)
    r = SeededRng(9, 1)
    errs = []
    for _ in range(20000):
        e = est.SpiderOnlineEstimator(loss, stream, 5, b1)
        v = e.step(x, r, est.IfoCounter())
        errs.append(np.sum((v - truth) ** 2))
    mse = np.mean(errs)
    oracle = stream.grad_variance() / b1
    assert abs(mse - oracle) <= 0.2 * oracle


def test_online_refresh_mse_below_gradient_bound(rng):
    s = synthetic_binary(200, 6, seed=5)
    loss = SigmoidLoss(s)
    stream = ResampleStream(s)
    x = rng.standard_normal(6)
    truth = loss.full_grad(x)
    delta_sq = np.max(np.sum(loss.per_sample_grads(x) ** 2, axis=1))
    r = SeededRng(2, 1)
    b1 = 9
    mse = np.mean([
        np.sum((est.SpiderOnlineEstimator(loss, stream, 3, b1).step(x, r, est.IfoCounter()) - truth) ** 2)
        for _ in range(20000)
    ])
    assert mse <= 1.1 * delta_sq / b1


def test_svrg_first_inner_step_is_full_gradient(loss, rng):
    e = est.SvrgEstimator(loss, 3, 4)
    r = SeededRng(0, 1)
    ifo = est.IfoCounter()
    for k, x in enumerate(_walk(rng, 8, 7)):
        v = e.step(x, r, ifo)
        if k % 3 == 0:
            assert np.array_equal(v, loss.full_grad(x))
            assert np.array_equal(e.full_grad_snapshot, loss.full_grad(e.x_snapshot))
    assert ifo.count == est.ifo_total_svrg(7, 64, 3, 4)
    assert e.epoch == 2 and e.t == 1


def test_svrg_m1_matches_full_gradient(loss, rng):
    e = est.SvrgEstimator(loss, 1, 7)
    r = SeededRng(0, 1)
    for x in _walk(rng, 8, 5):
        assert np.array_equal(e.step(x, r, est.IfoCounter()), loss.full_grad(x))


def test_svrg_b_equals_n_unbiased(loss, rng):
    e = est.SvrgEstimator(loss, 10, 64)
    e.step(rng.standard_normal(8), SeededRng(0, 1), est.IfoCounter())
    x = rng.standard_normal(8)
    r = SeededRng(3, 1)
    vs = np.array([e.clone().step(x, r, est.IfoCounter()) for _ in range(4000)])
    g = loss.full_grad(x)
    se = vs.std(axis=0, ddof=1) / math.sqrt(len(vs))
    assert np.all(np.abs(vs.mean(axis=0) - g) <= 4 * se + 1e-15)


def test_saga_synchronized_table(loss, rng):
    x = rng.standard_normal(8)
    ifo = est.IfoCounter()
    e = est.SagaEstimator(loss, 5, x, ifo)
    assert ifo.count == 64
    assert np.allclose(e.phi, loss.full_grad(x), atol=1e-15)
    v = e.step(x, SeededRng(0, 1), ifo)
    assert np.allclose(v, loss.full_grad(x), atol=1e-15)
    assert ifo.count == 64 + 5


def test_saga_single_sample(rng):
    one = SampleSet(rng.standard_normal((1, 3)), [-1.0])
    loss = SigmoidLoss(one)
    e = est.SagaEstimator(loss, 3, np.zeros(3), est.IfoCounter())
    for x in _walk(rng, 3, 4):
        assert np.allclose(e.step(x, SeededRng(0, 1), est.IfoCounter()), loss.full_grad(x), atol=1e-15)


def test_saga_table_and_phi_stay_consistent(loss, rng):
    e = est.SagaEstimator(loss, 9, rng.standard_normal(8), est.IfoCounter())
    r = SeededRng(0, 1)
    for x in _walk(rng, 8, 200):
        e.step(x, r, est.IfoCounter())
    assert np.max(np.abs(e.phi - e.grad_table.mean(axis=0))) <= 1e-10
    assert e.resync() <= 1e-10
    for i in range(64):
        assert np.allclose(e.grad_table[i], loss.per_sample_grads(e.points[i], [i])[0], atol=1e-15)


def test_saga_duplicate_indices_last_write_wins(rng):
    loss = QuadraticLoss(rng.standard_normal((2, 2)))
    e = est.SagaEstimator(loss, 4, np.zeros(2), est.IfoCounter())

    class FixedRng:
        def integers(self, n, size):
            return np.array([1, 1, 1, 0])

    x = np.array([0.5, -0.25])
    e.step(x, FixedRng(), est.IfoCounter())
    assert np.allclose(e.phi, e.grad_table.mean(axis=0), atol=1e-15)
    assert np.allclose(e.points, [x, x])


def test_ifo_closed_form_examples():
    assert est.ifo_total_spider(10, 8, 2, 2) == 60
    assert est.ifo_total_spider(9, 8, 1, 5) == 72
    assert est.ifo_total_spider(6, 8, 6, 3) == 8 + 2 * 3 * 5
    assert est.ifo_total_deterministic(4, 10) == 40
    assert est.ifo_total_saga(5, 10, 3) == 25


def test_ifo_counter_monotone():
    c = est.IfoCounter()
    c.add(3)
    with pytest.raises(ValueError):
        c.add(-1)
    assert int(c) == 3


@given(
    st.integers(1, 30), st.integers(1, 8), st.integers(1, 6), st.integers(0, 20), st.integers(1, 6),
)
def test_live_counts_equal_closed_forms(n, b, q, K, M):
    loss = QuadraticLoss(np.random.default_rng(n).standard_normal((n, 2)))
    xs = [np.full(2, 0.1 * k) for k in range(K)]
    r = SeededRng(0, 1)
    cases = [
        (est.FullGradientEstimator(loss), est.ifo_total_deterministic(K, n), None),
        (est.SgdEstimator(loss, b), est.ifo_total_sgd(K, b), None),
        (est.SpiderEstimator(loss, q, b), est.ifo_total_spider(K, n, q, b), None),
        (est.SvrgEstimator(loss, M, b), est.ifo_total_svrg(K, n, M, b), None),
    ]
    for e, closed, _ in cases:
        c = est.IfoCounter()
        for x in xs:
            e.step(x, r, c)
        assert c.count == closed
    c = est.IfoCounter()
    e = est.SagaEstimator(loss, b, np.zeros(2), c)
    for x in xs:
        e.step(x, r, c)
    assert c.count == est.ifo_total_saga(K, n, b)
    c = est.IfoCounter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        e = est.SpiderOnlineEstimator(loss, ResampleStream(loss.samples), q, b * b)
    for x in xs:
        e.step(x, r, c)
    assert c.count == est.ifo_total_spider_online(K, b * b, q, b)

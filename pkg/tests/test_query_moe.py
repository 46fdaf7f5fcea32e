import numpy as np
import pytest
from hypothesis import given, strategies as st

from stim.errors import ConfigError
from stim.numeric import grad_check
from stim.query_moe import DEFAULT_PAIRS, PARTS, ConcatQuery, MoEConfig, QueryMoE, pairwise_queries, validate_pairs

DIMS = {"hour": 4, "week": 4, "loc": 4, "item": 12}


def make_slices(rng, B=5):
    return {p: rng.normal(size=(B, d)) for p, d in DIMS.items()}


def test_shapes_and_count():
    rng = np.random.default_rng(0)
    moe = QueryMoE(DIMS, MoEConfig(d_q=6), rng)
    qs, _ = moe.forward(make_slices(rng), np.zeros(5))
    assert len(qs) == 5
    assert all(q.shape == (5, 6) for q in qs)
    assert MoEConfig(pairwise=False).n_queries == 1


def test_first_query_is_sum_and_pairs_are_pair_sums():
    rng = np.random.default_rng(1)
    moe = QueryMoE(DIMS, MoEConfig(), rng)
    s, hol = make_slices(rng), rng.integers(0, 2, 5)
    qs, _ = moe.forward(s, hol)
    parts = moe.weighted_parts(s, hol)
    assert np.allclose(qs[0], sum(parts[p] for p in PARTS), atol=1e-14)
    for q, (a, b) in zip(qs[1:], DEFAULT_PAIRS):
        assert np.allclose(q, parts[a] + parts[b], atol=1e-14)


@given(st.integers(0, 10_000), st.floats(0.0, 3.0))
def test_holiday_identity(seed, alpha):
    rng = np.random.default_rng(seed)
    moe = QueryMoE(DIMS, MoEConfig(alpha_holiday=alpha), rng)
    s = make_slices(rng)
    q0, _ = moe.forward(s, np.zeros(5))
    q1, _ = moe.forward(s, np.ones(5))
    h, _ = moe.expert_outputs(s, np.zeros(5))
    assert np.allclose(q1[0] - q0[0], alpha * h["week"], rtol=0, atol=1e-9)
    # hour/loc/item pathways do not see the holiday flag
    assert np.allclose(q1[1], q0[1], rtol=0, atol=0)


def test_holiday_enhancement_switch():
    rng = np.random.default_rng(2)
    moe = QueryMoE(DIMS, MoEConfig(holiday_enhancement=False), rng)
    s = make_slices(rng)
    assert np.array_equal(moe.forward(s, np.zeros(5))[0][0], moe.forward(s, np.ones(5))[0][0])


def test_gates_are_scalars_in_unit_interval():
    rng = np.random.default_rng(3)
    moe = QueryMoE(DIMS, MoEConfig(alpha_holiday=0.5), rng)
    _, w = moe.expert_outputs(make_slices(rng), np.ones(5))
    for p in ("hour", "loc", "item"):
        assert w[p].shape == (5, 1)
        assert np.all((w[p] > 0) & (w[p] < 1))
    assert np.all((w["week"] > 0.5) & (w["week"] < 1.5))


@pytest.mark.parametrize("pairs", [
    DEFAULT_PAIRS[:3],
    DEFAULT_PAIRS[:3] + (("item", "hour"),),
    DEFAULT_PAIRS[:3] + (("hour", "hour"),),
    DEFAULT_PAIRS[:3] + (("hour", "price"),),
])
def test_pair_validation(pairs):
    with pytest.raises(ConfigError):
        validate_pairs(pairs)


def test_custom_pairs():
    parts = {p: np.full((1, 2), i + 1.0) for i, p in enumerate(PARTS)}
    pairs = (("hour", "week"), ("week", "loc"), ("loc", "item"), ("hour", "item"))
    assert [q[0, 0] for q in pairwise_queries(parts, pairs)] == [3.0, 5.0, 7.0, 5.0]


def test_missing_slice_rejected():
    with pytest.raises(ConfigError):
        QueryMoE({"hour": 4}, MoEConfig(), np.random.default_rng(0))


def test_moe_gradients():
    rng = np.random.default_rng(5)
    moe = QueryMoE(DIMS, MoEConfig(d_q=4), rng)
    s, hol = make_slices(rng, 3), np.array([0, 1, 1])
    targets = [rng.normal(size=(3, 4)) for _ in range(5)]

    def loss():
        qs, _ = moe.forward(s, hol)
        return float(sum(np.sum(q * t) for q, t in zip(qs, targets)))

    def loss_and_grad():
        qs, cache = moe.forward(s, hol)
        g = moe.backward(cache, targets)
        assert set(g) == set(PARTS)
        return float(sum(np.sum(q * t) for q, t in zip(qs, targets)))

    assert grad_check(loss_and_grad, moe.parameters(), loss_fn=loss).passed(1e-6)


def test_concat_query_single():
    rng = np.random.default_rng(0)
    cq = ConcatQuery(10, 8, rng)
    qs, _ = cq.forward(rng.normal(size=(2, 10)))
    assert len(qs) == 1 and qs[0].shape == (2, 8)

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stim.context import Material
from stim.errors import ConfigError
from stim.hmin import HMIN, HminConfig, attention_weights, hmin_attend, spatio_temporal_concat
from stim.numeric import grad_check, l2_normalize, masked_softmax


def setup(seed=0, B=3, L=6, heads=2):
    rng = np.random.default_rng(seed)
    unit = HMIN(HminConfig(heads=heads, d_k=4, d_q=5), rng)
    K = rng.normal(size=(B, L, 4))
    Q = rng.normal(size=(B, 5))
    mask = rng.uniform(size=(B, L))
    valid = np.ones((B, L), bool)
    valid[0, 3:] = False
    return unit, K, Q, mask, valid


def test_output_shape():
    unit, K, Q, mask, valid = setup()
    out, empty = hmin_attend(K, Q, mask, valid, unit)
    assert out.shape == (3, 8)
    assert not empty.any()


def test_weights_match_reference():
    unit, K, Q, mask, valid = setup(1)
    q_hat, _ = l2_normalize(unit.query_net(Q))
    k_hat, _ = l2_normalize(K)
    expected = masked_softmax(np.einsum("bld,bd->bl", k_hat, q_hat) * mask, valid)
    assert np.allclose(attention_weights(K, Q, mask, valid, unit), expected, atol=1e-14)


@given(st.integers(0, 10_000))
def test_padding_gets_no_weight(seed):
    unit, K, Q, mask, valid = setup(seed)
    w = attention_weights(K, Q, mask, valid, unit)
    assert np.all(w[~valid] == 0)
    assert np.allclose(w.sum(axis=1), 1.0)
    # padded keys cannot influence the output
    K2 = K.copy()
    K2[~valid] = 1e3
    a, _ = hmin_attend(K, Q, mask, valid, unit)
    b, _ = hmin_attend(K2, Q, mask, valid, unit)
    assert np.allclose(a, b, atol=1e-12)


def test_empty_row_is_zero_and_flagged():
    unit, K, Q, mask, valid = setup()
    valid[1] = False
    out, empty = hmin_attend(K, Q, mask, valid, unit)
    assert empty.tolist() == [False, True, False]
    assert np.all(out[1] == 0)


def test_zero_mask_gives_uniform_pooling():
    unit, K, Q, _, valid = setup(2, heads=1)
    out, _ = hmin_attend(K, Q, np.zeros(valid.shape), valid, unit)
    v = unit.head_nets[0](K)
    n = valid.sum(1, keepdims=True)
    assert np.allclose(out, (v * valid[:, :, None]).sum(1) / n, atol=1e-14)


def test_material_major_order():
    unit, K, Q, mask, valid = setup(3)
    masks = np.stack([mask, mask ** 2, 1 - mask], axis=-1)
    Q2 = Q[::-1].copy()
    outs, _ = unit.forward(K, [Q, Q2], masks, valid)
    assert len(outs) == 6
    assert np.allclose(outs[3], hmin_attend(K, Q2, masks[:, :, 1], valid, unit)[0])


def test_spatio_temporal_concat_order_and_errors():
    outs = {(m, q): np.full((1, 2), 10 * int(m) + q) for m in Material for q in range(5)}
    cat = spatio_temporal_concat(outs)
    assert cat[0, ::2].tolist() == [0, 1, 2, 3, 4, 10, 11, 12, 13, 14, 20, 21, 22, 23, 24]
    del outs[(Material.GEO, 4)]
    with pytest.raises(KeyError):
        spatio_temporal_concat(outs)


def test_key_shape_checked():
    unit, K, Q, mask, valid = setup()
    with pytest.raises(ConfigError):
        hmin_attend(K[..., :3], Q, mask, valid, unit)


def test_hmin_gradients():
    unit, K, Q, mask, valid = setup(4, B=2, L=5)
    masks = np.stack([mask, 1 - mask, mask * 0.5], axis=-1)
    Qs = [Q, Q * 0.5 + 0.1]
    rng = np.random.default_rng(9)
    targets = [rng.normal(size=(2, 8)) for _ in range(6)]

    def loss():
        outs, _ = unit.forward(K, Qs, masks, valid)
        return float(sum(np.sum(o * t) for o, t in zip(outs, targets)))

    def loss_and_grad():
        outs, cache = unit.forward(K, Qs, masks, valid)
        unit.backward(cache, targets)
        return loss()

    rep = grad_check(loss_and_grad, unit.parameters(), loss_fn=loss)
    assert rep.passed(1e-5), rep.errors

    # input gradients against central differences
    outs, cache = unit.forward(K, Qs, masks, valid)
    gK, gQs, gM = unit.backward(cache, targets)
    eps = 1e-6
    for arr, g in ((K, gK), (Qs[0], gQs[0]), (masks, gM)):
        idx = tuple(np.unravel_index(7, arr.shape))
        old = arr[idx]
        arr[idx] = old + eps
        up = loss()
        arr[idx] = old - eps
        down = loss()
        arr[idx] = old
        assert g[idx] == pytest.approx((up - down) / (2 * eps), rel=1e-5, abs=1e-8)

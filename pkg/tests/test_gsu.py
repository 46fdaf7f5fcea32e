import numpy as np
import pytest
from hypothesis import given, strategies as st

from stim.events import BehaviorSequence, RequestContext
from stim.gsu import gsu_search, pad_sequence

from conftest import T0, make_sequence, random_sequence


def brute_force_gsu(seq: BehaviorSequence, category: int, k: int):
    """Scan from newest to oldest collecting same-category events, then restore order."""
    picked = []
    for i in range(len(seq) - 1, -1, -1):
        if seq.category_ids[i] == category and len(picked) < k:
            picked.append(i)
    return picked[::-1]


@given(st.integers(0, 10_000), st.integers(0, 40), st.integers(1, 20), st.integers(0, 5))
def test_gsu_matches_brute_force(seed, n, k, cat):
    seq = random_sequence(np.random.default_rng(seed), n)
    req = RequestContext.at(T0 + 40 * 86400, "w0bcde", 1, cat, 1)
    out = gsu_search(seq, req, k)
    idx = brute_force_gsu(seq, cat, k)
    assert out.k == k
    assert out.n_valid == len(idx)
    assert out.valid_mask.tolist() == [True] * len(idx) + [False] * (k - len(idx))
    assert out.events.item_ids[:len(idx)].tolist() == seq.item_ids[idx].tolist()
    assert out.events.timestamps[:len(idx)].tolist() == seq.timestamps[idx].tolist()
    assert np.all(out.events.item_ids[len(idx):] == 0)
    assert np.all(out.events.geohashes[len(idx):] == "")


def test_gsu_example():
    seq = make_sequence([(i, 1 + i % 2, 1, float(T0 + 3600 * i), "w0bcde") for i in range(1, 9)])
    out = gsu_search(seq, RequestContext.at(T0 + 86400, "w0bcde", 1, 2, 1), 3)
    # category 2 holds odd item ids 1,3,5,7; the newest three survive
    assert out.events.item_ids.tolist() == [3, 5, 7]


def test_gsu_empty_history():
    out = gsu_search(BehaviorSequence.empty(), RequestContext.at(T0, "w0bcde", 1, 1, 1), 4)
    assert out.n_valid == 0
    assert out.valid_events() == []


def test_gsu_rejects_bad_k():
    with pytest.raises(ValueError):
        gsu_search(BehaviorSequence.empty(), RequestContext.at(T0, "w0bcde", 1, 1, 1), 0)


def test_pad_sequence_keeps_latest():
    seq = make_sequence([(i, 1, 1, float(T0 + i), "w0bcde") for i in range(1, 6)])
    out = pad_sequence(seq, 3)
    assert out.events.item_ids.tolist() == [3, 4, 5]
    assert pad_sequence(seq, 7).valid_mask.sum() == 5

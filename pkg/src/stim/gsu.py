"""General Search Unit: target-conditioned hard search over the raw history."""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from .events import BehaviorEvent, BehaviorSequence, CompressedSequence, as_sequence


def pad_sequence(seq: BehaviorSequence, k: int) -> CompressedSequence:
    """Copy up to the last ``k`` events of ``seq`` into ``k`` slots, padding the tail."""
    seq = seq.tail(k)
    n = len(seq)
    padded = BehaviorSequence(
        np.concatenate([seq.item_ids, np.zeros(k - n, np.int64)]),
        np.concatenate([seq.category_ids, np.zeros(k - n, np.int64)]),
        np.concatenate([seq.shop_ids, np.zeros(k - n, np.int64)]),
        np.concatenate([seq.timestamps, np.zeros(k - n)]),
        np.concatenate([seq.hours, np.zeros(k - n, np.int64)]),
        np.concatenate([seq.weekdays, np.zeros(k - n, np.int64)]),
        np.concatenate([seq.geohashes, np.full(k - n, "", dtype="<U12")]),
        np.concatenate([seq.prices, np.full(k - n, np.nan)]),
    )
    valid = np.zeros(k, dtype=bool)
    valid[:n] = True
    return CompressedSequence(padded, valid, k)


def gsu_search(
    sequence: Union[BehaviorSequence, Sequence[BehaviorEvent]],
    target,
    k: int,
) -> CompressedSequence:
    """Keep events sharing the target's category, the ``k`` most recent of them.

    ``target`` is anything with a ``category_id`` attribute (a request or an
    event). Chronological order is preserved and padding goes after the valid
    slots. An empty history yields an all-padding result.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    seq = as_sequence(sequence)
    hits = np.flatnonzero(seq.category_ids == int(target.category_id))
    return pad_sequence(seq.take(hits), k)

import numpy as np
import pytest
from hypothesis import settings

from stim.context import geohash_encode
from stim.events import BehaviorEvent, BehaviorSequence, RequestContext
from stim.model import ModelConfig

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

HOUR = 3600
DAY = 86400
T0 = 1709510400  # Monday 2024-03-04 00:00 UTC


def rand_batch(cfg: ModelConfig, B: int, rng: np.random.Generator) -> dict:
    """Random encoded batch with a ragged valid prefix per row."""
    k = cfg.k
    valid = np.zeros((B, k), bool)
    for r in range(B):
        valid[r, :rng.integers(1, k + 1)] = True
    return {
        "seq_item": rng.integers(0, cfg.n_items + 1, (B, k)),
        "seq_cat": rng.integers(0, cfg.n_categories + 1, (B, k)),
        "seq_shop": rng.integers(0, cfg.n_shops + 1, (B, k)),
        "seq_hour": rng.integers(0, 24, (B, k)),
        "seq_weekday": rng.integers(0, 7, (B, k)),
        "seq_geo": rng.integers(0, 3, (B, k)),
        "valid": valid,
        "masks": rng.uniform(size=(B, k, 3)) * valid[:, :, None],
        "req_hour": rng.integers(0, 24, B),
        "req_weekday": rng.integers(0, 7, B),
        "req_geo": rng.integers(0, 3, B),
        "holiday": rng.integers(0, 2, B),
        "tgt_item": rng.integers(0, cfg.n_items + 1, B),
        "tgt_cat": rng.integers(0, cfg.n_categories + 1, B),
        "tgt_shop": rng.integers(0, cfg.n_shops + 1, B),
        "user": rng.integers(0, 4, B),
        "y_ctr": rng.integers(0, 2, B).astype(float),
        "y_ctcvr": rng.integers(0, 2, B).astype(float),
    }


def make_sequence(rows) -> BehaviorSequence:
    """rows: iterable of (item, cat, shop, timestamp, geohash6)."""
    return BehaviorSequence.from_events(BehaviorEvent.at(*r) for r in rows)


def random_sequence(rng: np.random.Generator, n: int, n_cat: int = 4, t_end: float = T0 + 30 * DAY):
    ts = np.sort(rng.uniform(T0, t_end, n)).astype(int)
    rows = []
    for t in ts:
        geo = geohash_encode(rng.uniform(-89, 89), rng.uniform(-179, 179), 6)
        rows.append((int(rng.integers(1, 50)), int(rng.integers(1, n_cat + 1)), int(rng.integers(1, 9)), float(t), geo))
    return make_sequence(rows)


@pytest.fixture
def small_config():
    return ModelConfig(n_items=10, n_categories=5, n_shops=6, k=16, head_hidden=(8, 4))


@pytest.fixture
def request_ctx():
    return RequestContext.at(T0 + 31 * DAY + 8 * HOUR, "w0bcde", 3, 2, 1)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(number, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: s.split(":")[0].split()[1]):
            terminalreporter.write_line(line)

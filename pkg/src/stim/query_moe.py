"""Query mixture-of-experts: gated time/location/item experts -> weighted queries.

Three base experts read the full context vector ``X``; the time expert feeds an
hour and a week sub-expert. Each of the four parts (hour, week, loc, item) is
scaled by a scalar sigmoid gate computed from its own slice of ``X``. The week
gate gets ``alpha_holiday`` added on holidays. The first query is the sum of
all four weighted parts; the remaining ones are configured pairwise sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .numeric import FeedForwardBlock, Linear, Module

PARTS = ("hour", "week", "loc", "item")
DEFAULT_PAIRS: Tuple[Tuple[str, str], ...] = (("hour", "item"), ("week", "item"), ("loc", "item"), ("hour", "loc"))


def validate_pairs(pairs: Sequence[Sequence[str]]) -> Tuple[Tuple[str, str], ...]:
    seen = set()
    out = []
    for pair in pairs:
        if len(pair) != 2 or pair[0] == pair[1] or any(p not in PARTS for p in pair):
            raise ConfigError(f"invalid expert pair {tuple(pair)!r}; parts are {PARTS}")
        key = frozenset(pair)
        if key in seen:
            raise ConfigError(f"duplicate expert pair {tuple(pair)!r}")
        seen.add(key)
        out.append((pair[0], pair[1]))
    if len(out) != 4:
        raise ConfigError(f"expected exactly 4 expert pairs, got {len(out)}")
    return tuple(out)


def pairwise_queries(parts: Mapping[str, np.ndarray], pairs: Sequence[Sequence[str]] = DEFAULT_PAIRS) -> List[np.ndarray]:
    """Sum of the two weighted parts for each configured pair."""
    return [parts[a] + parts[b] for a, b in validate_pairs(pairs)]


@dataclass
class MoEConfig:
    d_q: int = 8
    alpha_holiday: float = 0.5
    expert_hidden: Tuple[int, ...] = (8, 4)
    gate_hidden: Tuple[int, ...] = (8, 4)
    pairs: Tuple[Tuple[str, str], ...] = DEFAULT_PAIRS
    holiday_enhancement: bool = True
    pairwise: bool = True

    def __post_init__(self):
        if self.alpha_holiday < 0:
            raise ConfigError(f"alpha_holiday must be >= 0, got {self.alpha_holiday}")
        self.pairs = validate_pairs(self.pairs)
        self.expert_hidden = tuple(self.expert_hidden)
        self.gate_hidden = tuple(self.gate_hidden)

    @property
    def n_queries(self) -> int:
        return 1 + len(self.pairs) if self.pairwise else 1


class QueryMoE(Module):
    def __init__(self, slice_dims: Mapping[str, int], config: MoEConfig, rng: np.random.Generator):
        missing = [p for p in PARTS if p not in slice_dims]
        if missing:
            raise ConfigError(f"missing context slices: {missing}")
        self.config = config
        self.slice_dims = {p: int(slice_dims[p]) for p in PARTS}
        x_dim = sum(self.slice_dims.values())
        d, eh, gh = config.d_q, config.expert_hidden, config.gate_hidden
        self.expert_time = FeedForwardBlock(d, eh, in_dim=x_dim, rng=rng)
        self.expert_loc = FeedForwardBlock(d, eh, in_dim=x_dim, rng=rng)
        self.expert_item = FeedForwardBlock(d, eh, in_dim=x_dim, rng=rng)
        self.expert_hour = FeedForwardBlock(d, eh, in_dim=d, rng=rng)
        self.expert_week = FeedForwardBlock(d, eh, in_dim=d, rng=rng)
        self.gates = {
            p: FeedForwardBlock(1, gh, in_dim=self.slice_dims[p], output_activation="sigmoid", rng=rng)
            for p in PARTS
        }

    def forward(self, slices: Mapping[str, np.ndarray], holiday: np.ndarray):
        """Return ``(queries, cache)``; ``queries`` holds ``n_queries`` arrays of shape ``(B, d_q)``."""
        for p in PARTS:
            if slices[p].shape[-1] != self.slice_dims[p]:
                raise ConfigError(f"slice {p!r} has width {slices[p].shape[-1]}, expected {self.slice_dims[p]}")
        X = np.concatenate([slices[p] for p in PARTS], axis=-1)
        h_time, c_time = self.expert_time.forward(X)
        h = {}
        caches = {}
        h["loc"], caches["loc"] = self.expert_loc.forward(X)
        h["item"], caches["item"] = self.expert_item.forward(X)
        h["hour"], caches["hour"] = self.expert_hour.forward(h_time)
        h["week"], caches["week"] = self.expert_week.forward(h_time)
        gate = {}
        gate_caches = {}
        for p in PARTS:
            gate[p], gate_caches[p] = self.gates[p].forward(slices[p])
        weight = dict(gate)
        if self.config.holiday_enhancement:
            weight["week"] = gate["week"] + self.config.alpha_holiday * np.asarray(holiday, dtype=np.float64)[:, None]
        parts = {p: weight[p] * h[p] for p in PARTS}
        queries = [parts["hour"] + parts["week"] + parts["loc"] + parts["item"]]
        if self.config.pairwise:
            queries += pairwise_queries(parts, self.config.pairs)
        cache = (slices, c_time, h, caches, weight, gate_caches)
        return queries, cache

    def weighted_parts(self, slices: Mapping[str, np.ndarray], holiday: np.ndarray) -> Dict[str, np.ndarray]:
        """The four gated expert outputs; useful for inspection."""
        _, (_, _, h, _, weight, _) = self.forward(slices, holiday)
        return {p: weight[p] * h[p] for p in PARTS}

    def expert_outputs(self, slices: Mapping[str, np.ndarray], holiday: np.ndarray):
        """``(h, weight)`` dicts: expert vectors and (holiday-adjusted) gate values."""
        _, (_, _, h, _, weight, _) = self.forward(slices, holiday)
        return h, weight

    def backward(self, cache, grad_queries: Sequence[np.ndarray]) -> Dict[str, np.ndarray]:
        slices, c_time, h, caches, weight, gate_caches = cache
        g_part = {p: grad_queries[0].copy() for p in PARTS}
        if self.config.pairwise:
            for (a, b), g in zip(self.config.pairs, grad_queries[1:]):
                g_part[a] += g
                g_part[b] += g
        g_h = {p: g_part[p] * weight[p] for p in PARTS}
        # scalar gates broadcast over d_q; the holiday term is a constant shift
        g_gate = {p: np.sum(g_part[p] * h[p], axis=-1, keepdims=True) for p in PARTS}

        g_time = self.expert_hour.backward(caches["hour"], g_h["hour"])
        g_time += self.expert_week.backward(caches["week"], g_h["week"])
        g_X = self.expert_time.backward(c_time, g_time)
        g_X += self.expert_loc.backward(caches["loc"], g_h["loc"])
        g_X += self.expert_item.backward(caches["item"], g_h["item"])

        grads = {}
        start = 0
        for p in PARTS:
            width = self.slice_dims[p]
            grads[p] = g_X[..., start:start + width] + self.gates[p].backward(gate_caches[p], g_gate[p])
            start += width
        return grads


class ConcatQuery(Module):
    """Single query from a linear projection of concatenated item and scene features."""

    def __init__(self, in_dim: int, d_q: int, rng: np.random.Generator):
        self.proj = Linear(in_dim, d_q, rng)

    def forward(self, x: np.ndarray):
        q, cache = self.proj.forward(x)
        return [q], cache

    def backward(self, cache, grad_queries: Sequence[np.ndarray]) -> np.ndarray:
        return self.proj.backward(cache, grad_queries[0])

"""Hierarchical multi-interest attention over the compressed sequence.

Shallow stage: cosine similarity between the projected, normalized query and
the normalized keys, multiplied by the refined mask of one material. Deep
stage: a masked softmax over valid positions pools each head's feed-forward
transform of the keys; head outputs are concatenated.

Key-side work (normalization, per-head transforms) is shared by every
(query, material) pair, so :class:`HMIN` computes it once per batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .context import Material
from .errors import ConfigError
from .numeric import (
    FeedForwardBlock,
    Module,
    l2_normalize,
    l2_normalize_backward,
    masked_softmax,
)


@dataclass
class HminConfig:
    heads: int = 2
    d_k: int = 8
    d_q: int = 8
    query_hidden: Tuple[int, ...] = (8, 4)
    head_hidden: Tuple[int, ...] = (8, 4)

    def __post_init__(self):
        if self.heads < 1 or self.d_k < 1 or self.d_q < 1:
            raise ConfigError(f"heads, d_k and d_q must be >= 1: {self}")
        self.query_hidden = tuple(self.query_hidden)
        self.head_hidden = tuple(self.head_hidden)

    @property
    def out_dim(self) -> int:
        return self.heads * self.d_k


class HMIN(Module):
    def __init__(self, config: HminConfig, rng: np.random.Generator):
        self.config = config
        self.query_net = FeedForwardBlock(config.d_k, config.query_hidden, in_dim=config.d_q, rng=rng)
        self.head_nets = [
            FeedForwardBlock(config.d_k, config.head_hidden, in_dim=config.d_k, rng=rng)
            for _ in range(config.heads)
        ]

    # -- key side ---------------------------------------------------------
    def encode_keys(self, K: np.ndarray) -> dict:
        if K.ndim != 3 or K.shape[-1] != self.config.d_k:
            raise ConfigError(f"keys must be (B, L, {self.config.d_k}), got {K.shape}")
        k_hat, k_norm = l2_normalize(K, axis=-1)
        values, value_caches = [], []
        for net in self.head_nets:
            v, c = net.forward(K)
            values.append(v)
            value_caches.append(c)
        return {
            "k_hat": k_hat, "k_norm": k_norm, "values": values, "value_caches": value_caches,
            "g_k_hat": np.zeros_like(K), "g_values": [np.zeros_like(v) for v in values],
        }

    def keys_backward(self, keys: dict) -> np.ndarray:
        g = l2_normalize_backward(keys["k_hat"], keys["k_norm"], keys["g_k_hat"], axis=-1)
        for net, c, gv in zip(self.head_nets, keys["value_caches"], keys["g_values"]):
            g = g + net.backward(c, gv)
        return g

    # -- query side -------------------------------------------------------
    def encode_query(self, Q: np.ndarray, keys: dict):
        q_proj, q_cache = self.query_net.forward(Q)
        q_hat, q_norm = l2_normalize(q_proj, axis=-1)
        cos = np.einsum("bld,bd->bl", keys["k_hat"], q_hat)
        return cos, (q_cache, q_hat, q_norm)

    def query_backward(self, qstate, keys: dict, g_cos: np.ndarray) -> np.ndarray:
        q_cache, q_hat, q_norm = qstate
        keys["g_k_hat"] += g_cos[:, :, None] * q_hat[:, None, :]
        g_q_hat = np.einsum("bl,bld->bd", g_cos, keys["k_hat"])
        g_q_proj = l2_normalize_backward(q_hat, q_norm, g_q_hat, axis=-1)
        return self.query_net.backward(q_cache, g_q_proj)

    # -- pooling ----------------------------------------------------------
    def pool(self, cos: np.ndarray, mask: np.ndarray, valid: np.ndarray, keys: dict):
        scores = cos * mask
        w = masked_softmax(scores, valid, axis=-1)
        out = np.concatenate([np.einsum("bl,bld->bd", w, v) for v in keys["values"]], axis=-1)
        return out, w

    def pool_backward(self, cos: np.ndarray, mask: np.ndarray, w: np.ndarray, keys: dict,
                      g_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Returns ``(g_cos, g_mask)`` and accumulates into the key buffers."""
        d_k = self.config.d_k
        g_w = np.zeros_like(w)
        for h, v in enumerate(keys["values"]):
            g_h = g_out[:, h * d_k:(h + 1) * d_k]
            g_w += np.einsum("bd,bld->bl", g_h, v)
            keys["g_values"][h] += w[:, :, None] * g_h[:, None, :]
        g_scores = w * (g_w - np.sum(g_w * w, axis=-1, keepdims=True))
        return g_scores * mask, g_scores * cos

    # -- full pass --------------------------------------------------------
    def forward(self, K: np.ndarray, queries: Sequence[np.ndarray], masks: np.ndarray, valid: np.ndarray):
        """Attend with every query under every mask column.

        ``masks`` is ``(B, L, M)``. Outputs are ordered material-major,
        query-minor: ``[(m0,q0), (m0,q1), ..., (m1,q0), ...]``.
        """
        keys = self.encode_keys(K)
        qstates, cosines = [], []
        for Q in queries:
            cos, qs = self.encode_query(Q, keys)
            cosines.append(cos)
            qstates.append(qs)
        outputs, weights = [], []
        for m in range(masks.shape[-1]):
            for cos in cosines:
                o, w = self.pool(cos, masks[:, :, m], valid, keys)
                outputs.append(o)
                weights.append(w)
        cache = (keys, qstates, cosines, weights, masks)
        return outputs, cache

    def backward(self, cache, g_outputs: Sequence[np.ndarray]):
        """Returns ``(g_K, [g_Q per query], g_masks)``."""
        keys, qstates, cosines, weights, masks = cache
        nq = len(cosines)
        g_cos = [np.zeros_like(c) for c in cosines]
        g_masks = np.zeros_like(masks)
        for idx, g_out in enumerate(g_outputs):
            m, qi = divmod(idx, nq)
            gc, gm = self.pool_backward(cosines[qi], masks[:, :, m], weights[idx], keys, g_out)
            g_cos[qi] += gc
            g_masks[:, :, m] += gm
        g_queries = [self.query_backward(qs, keys, gc) for qs, gc in zip(qstates, g_cos)]
        return self.keys_backward(keys), g_queries, g_masks


def hmin_attend(K: np.ndarray, Q: np.ndarray, mask: np.ndarray, valid: np.ndarray, unit: HMIN):
    """Single (query, mask) attention.

    Returns ``(output (B, H*d_k), empty_rows)``; rows without any valid
    position produce zeros and are flagged in ``empty_rows``.
    """
    valid = np.asarray(valid, dtype=bool)
    outputs, _ = unit.forward(K, [Q], np.asarray(mask, dtype=np.float64)[:, :, None], valid)
    return outputs[0], ~valid.any(axis=1)


def attention_weights(K: np.ndarray, Q: np.ndarray, mask: np.ndarray, valid: np.ndarray, unit: HMIN) -> np.ndarray:
    keys = unit.encode_keys(K)
    cos, _ = unit.encode_query(Q, keys)
    return unit.pool(cos, mask, np.asarray(valid, dtype=bool), keys)[1]


def spatio_temporal_concat(outputs: Mapping[Tuple[Material, int], np.ndarray], n_queries: int = 5) -> np.ndarray:
    """Concatenate per-(material, query) outputs in material-major, query-minor order."""
    parts = []
    for material in Material:
        for q in range(n_queries):
            key = (material, q)
            if key not in outputs:
                raise KeyError(f"missing attention output for material={material.name}, query={q}")
            parts.append(outputs[key])
    extra = set(outputs) - {(m, q) for m in Material for q in range(n_queries)}
    if extra:
        raise KeyError(f"unexpected attention outputs: {sorted(extra)}")
    return np.concatenate(parts, axis=-1)

"""End-to-end ranking model and the GSU-only baseline.

Pipeline per request: GSU hard search -> forgetting-curve masks (hour, week,
geo) -> refined masks -> Query MoE -> HMIN attention for every (material,
query) pair -> concatenation with the other features ``C`` -> feed-forward
prediction head(s) -> sigmoid.

``C`` holds the target item (item, category, shop) and the request scene
(hour, weekday, geo group, holiday) embeddings. Both models receive the same
``C``; they differ only in how the behavior sequence is modeled.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .context import DEFAULT_GEO_RULE, GeoRule, HOUR_GROUP_TABLE, Material, assign_geo_group
from .errors import ConfigError
from .events import Example
from .forgetting import CurveParams, build_masks, make_refiner
from .gsu import gsu_search
from .hmin import HMIN, HminConfig
from .numeric import (
    Embedding,
    FeedForwardBlock,
    Linear,
    Module,
    TrainingError,
    bce_with_logits,
    load_checkpoint,
    make_optimizer,
    save_checkpoint,
    sigmoid,
)
from .query_moe import ConcatQuery, MoEConfig, QueryMoE

log = logging.getLogger(__name__)

TASKS = {"ctr": ("ctr",), "ctcvr": ("ctcvr",), "both": ("ctr", "ctcvr")}
MASK_ABLATIONS = {"N1": "decay_only", "N2": "flat_review", "N3": "review", "N4": "review"}
QUERY_ABLATIONS = ("M1", "M2", "M3", "M4")
ARCHITECTURES = ("stim", "gsu")
LOGIT_CLIP = 30.0
_MATERIAL_KEYS = {"hour": Material.HOUR, "week": Material.WEEK, "geo": Material.GEO}


@dataclass
class ModelConfig:
    architecture: str = "stim"
    embed_dim: int = 8
    n_items: int = 1000
    n_categories: int = 50
    n_shops: int = 500
    k: int = 64
    curves: Dict[str, CurveParams] = field(default_factory=lambda: {m: CurveParams() for m in _MATERIAL_KEYS})
    time_mapping: str = "rescaled"
    moe: MoEConfig = field(default_factory=MoEConfig)
    hmin: HminConfig = field(default_factory=HminConfig)
    head_hidden: Tuple[int, ...] = (64, 32)
    scene_in_head: bool = True
    task: str = "ctr"
    ablations: Tuple[str, ...] = ()
    geo_lead: str = "w"
    geo_split_after: str = "j"
    # training
    optimizer: str = "adam"
    lr: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 256
    epochs: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {tuple(TASKS)}, got {self.task!r}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.time_mapping not in ("rescaled", "index"):
            raise ConfigError(f"unknown time_mapping {self.time_mapping!r}")
        if set(self.curves) != set(_MATERIAL_KEYS):
            raise ConfigError(f"curves must define exactly {sorted(_MATERIAL_KEYS)}")
        if self.moe.d_q != self.hmin.d_q:
            raise ConfigError(f"moe.d_q ({self.moe.d_q}) must equal hmin.d_q ({self.hmin.d_q})")
        self.head_hidden = tuple(self.head_hidden)
        self.ablations = tuple(self.ablations)
        unknown = [a for a in self.ablations if a not in MASK_ABLATIONS and a not in QUERY_ABLATIONS]
        if unknown:
            raise ConfigError(f"unknown ablation switches {unknown}")
        for family, names in (("N", MASK_ABLATIONS), ("M", QUERY_ABLATIONS)):
            chosen = [a for a in self.ablations if a in names]
            if len(chosen) > 1:
                raise ConfigError(f"conflicting {family}-family ablation switches: {chosen}")
        self.geo_rule  # validates the characters

    # -- derived --------------------------------------------------------------
    @property
    def geo_rule(self) -> GeoRule:
        try:
            return GeoRule(self.geo_lead, self.geo_split_after)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def mask_ablation(self) -> str:
        return next((a for a in self.ablations if a in MASK_ABLATIONS), "N4")

    @property
    def query_ablation(self) -> str:
        return next((a for a in self.ablations if a in QUERY_ABLATIONS), "M4")

    @property
    def mask_variant(self) -> str:
        return MASK_ABLATIONS[self.mask_ablation]

    @property
    def tasks(self) -> Tuple[str, ...]:
        return TASKS[self.task]

    @property
    def material_curves(self) -> Dict[Material, CurveParams]:
        return {_MATERIAL_KEYS[name]: c for name, c in self.curves.items()}

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ablations"] = list(self.ablations)
        d["moe"]["pairs"] = [list(p) for p in self.moe.pairs]
        return d

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ModelConfig":
        raw = dict(raw)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            if "curves" in raw:
                base = {m: CurveParams() for m in _MATERIAL_KEYS}
                for name, params in raw["curves"].items():
                    if name not in base:
                        raise ConfigError(f"unknown curve material {name!r}")
                    base[name] = params if isinstance(params, CurveParams) else CurveParams(**params)
                raw["curves"] = base
            if "moe" in raw and not isinstance(raw["moe"], MoEConfig):
                moe = dict(raw["moe"])
                if "pairs" in moe:
                    moe["pairs"] = tuple(tuple(p) for p in moe["pairs"])
                raw["moe"] = MoEConfig(**moe)
            if "hmin" in raw and not isinstance(raw["hmin"], HminConfig):
                raw["hmin"] = HminConfig(**raw["hmin"])
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ModelConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# featurization
# ---------------------------------------------------------------------------

SEQ_FIELDS = ("seq_item", "seq_cat", "seq_shop", "seq_hour", "seq_weekday", "seq_geo")
REQ_FIELDS = ("req_hour", "req_weekday", "req_geo", "holiday", "tgt_item", "tgt_cat", "tgt_shop")


def _geo_groups(codes: np.ndarray, rule: GeoRule) -> np.ndarray:
    uniq, inverse = np.unique(codes, return_inverse=True)
    table = np.array([assign_geo_group(str(c), rule) if c else 0 for c in uniq], dtype=np.int64)
    return table[inverse].reshape(codes.shape)


def encode_examples(examples: Sequence[Example], config: ModelConfig) -> Dict[str, np.ndarray]:
    """Turn examples into the dense arrays the models consume.

    Runs the GSU search and builds the normalized (unrefined) masks for the
    configured mask variant. Ids are passed through unchanged; out-of-vocabulary
    ids fall back to row 0 at lookup time.
    """
    n, k = len(examples), config.k
    rule = config.geo_rule
    curves = config.material_curves
    out = {name: np.zeros((n, k), dtype=np.int64) for name in SEQ_FIELDS}
    out["valid"] = np.zeros((n, k), dtype=bool)
    out["masks"] = np.zeros((n, k, 3))
    for name in REQ_FIELDS:
        out[name] = np.zeros(n, dtype=np.int64)
    out["user"] = np.zeros(n, dtype=np.int64)
    out["timestamp"] = np.zeros(n)
    for task in ("ctr", "ctcvr"):
        out[f"y_{task}"] = np.zeros(n)
    geo_codes = np.full((n, k), "", dtype="<U12")
    req_codes = np.full(n, "", dtype="<U12")
    for r, ex in enumerate(examples):
        cs = gsu_search(ex.sequence, ex.request, k)
        ev = cs.events
        out["seq_item"][r] = ev.item_ids
        out["seq_cat"][r] = ev.category_ids
        out["seq_shop"][r] = ev.shop_ids
        out["seq_hour"][r] = ev.hours
        out["seq_weekday"][r] = ev.weekdays
        geo_codes[r] = ev.geohashes
        out["valid"][r] = cs.valid_mask
        out["masks"][r] = build_masks(cs, ex.request, curves, config.mask_variant, config.time_mapping, rule).stacked()
        req = ex.request
        out["req_hour"][r] = req.hour_of_day
        out["req_weekday"][r] = req.weekday
        req_codes[r] = req.geohash6
        out["holiday"][r] = req.is_holiday
        out["tgt_item"][r] = req.item_id
        out["tgt_cat"][r] = req.category_id
        out["tgt_shop"][r] = req.shop_id
        out["user"][r] = ex.user_id
        out["timestamp"][r] = req.timestamp
        for task in ("ctr", "ctcvr"):
            out[f"y_{task}"][r] = float(ex.labels.get(task, 0))
    out["seq_geo"] = np.where(out["valid"], _geo_groups(geo_codes, rule), 0)
    out["req_geo"] = _geo_groups(req_codes, rule) if n else np.zeros(0, dtype=np.int64)
    return out


def batch_size_of(batch: Mapping[str, np.ndarray]) -> int:
    return len(batch["valid"])


def take_rows(batch: Mapping[str, np.ndarray], rows) -> Dict[str, np.ndarray]:
    return {name: arr[rows] for name, arr in batch.items()}


# ---------------------------------------------------------------------------
# shared embedding bank
# ---------------------------------------------------------------------------

class EmbeddingBank(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        e = config.embed_dim
        self.item = Embedding(config.n_items + 1, e, rng)
        self.cat = Embedding(config.n_categories + 1, e, rng)
        self.shop = Embedding(config.n_shops + 1, e, rng)
        self.hour = Embedding(24, e, rng)
        self.weekday = Embedding(7, e, rng)
        self.geo = Embedding(3, e, rng)
        self.holiday = Embedding(2, e, rng)

    def lookup(self, pairs: Sequence[Tuple[str, np.ndarray]]):
        """Concatenate lookups ``[(table, ids), ...]`` on the last axis."""
        vals, caches = [], []
        for table, ids in pairs:
            v, c = getattr(self, table).forward(ids)
            vals.append(v)
            caches.append((table, c))
        return np.concatenate(vals, axis=-1), caches

    def backward(self, caches, grad: np.ndarray) -> None:
        e = grad.shape[-1] // len(caches)
        for i, (table, c) in enumerate(caches):
            getattr(self, table).backward(c, grad[..., i * e:(i + 1) * e])


def _context_pairs(batch, scene: bool = True) -> List[Tuple[str, np.ndarray]]:
    """Target item features, optionally followed by the request scene."""
    pairs = [("item", batch["tgt_item"]), ("cat", batch["tgt_cat"]), ("shop", batch["tgt_shop"])]
    if scene:
        pairs += [("hour", batch["req_hour"]), ("weekday", batch["req_weekday"]), ("geo", batch["req_geo"]),
                  ("holiday", batch["holiday"])]
    return pairs


class _RankingModel(Module):
    """Shared head/loss/training plumbing."""

    config: ModelConfig

    @property
    def context_dim(self) -> int:
        return (7 if self.config.scene_in_head else 3) * self.config.embed_dim

    def _build_heads(self, feat_dim: int, rng: np.random.Generator) -> None:
        self.heads = {
            task: FeedForwardBlock(1, self.config.head_hidden, in_dim=feat_dim, rng=rng)
            for task in self.config.tasks
        }

    def forward(self, batch):
        raise NotImplementedError

    def backward(self, cache, g_feat: np.ndarray) -> None:
        raise NotImplementedError

    def logits(self, batch) -> Dict[str, np.ndarray]:
        feat, _ = self.forward(batch)
        return {t: self.heads[t](feat)[:, 0] for t in self.config.tasks}

    def predict(self, batch) -> Dict[str, np.ndarray]:
        """Probabilities per task, strictly inside (0, 1)."""
        return {t: sigmoid(np.clip(z, -LOGIT_CLIP, LOGIT_CLIP)) for t, z in self.logits(batch).items()}

    def loss(self, batch) -> float:
        total = 0.0
        for t, z in self.logits(batch).items():
            total += bce_with_logits(z, batch[f"y_{t}"])[0]
        return total

    def loss_and_grad(self, batch) -> float:
        """Batch loss; gradients are accumulated into every Parameter."""
        feat, cache = self.forward(batch)
        total = 0.0
        g_feat = np.zeros_like(feat)
        for t in self.config.tasks:
            z, hc = self.heads[t].forward(feat)
            loss, g_z = bce_with_logits(z[:, 0], batch[f"y_{t}"])
            total += loss
            g_feat += self.heads[t].backward(hc, g_z[:, None])
        self.backward(cache, g_feat)
        return total

    def save(self, path) -> None:
        save_checkpoint(path, self.parameters(), self.config.to_dict())

    def load_state(self, tensors: Mapping[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(params) != set(tensors):
            missing = sorted(set(params) - set(tensors))
            extra = sorted(set(tensors) - set(params))
            raise ConfigError(f"checkpoint mismatch: missing={missing[:5]} extra={extra[:5]}")
        for name, p in params.items():
            if p.value.shape != tensors[name].shape:
                raise ConfigError(f"shape mismatch for {name}: {p.value.shape} vs {tensors[name].shape}")
            p.value[...] = tensors[name]


class STIM(_RankingModel):
    def __init__(self, config: ModelConfig):
        if config.architecture != "stim":
            raise ConfigError("STIM needs architecture='stim'")
        self.config = config
        rng = np.random.default_rng(config.seed)
        e = config.embed_dim
        self.embed = EmbeddingBank(config, rng)
        self.key_proj = Linear(len(SEQ_FIELDS) * e, config.hmin.d_k, rng)
        self.refiner = make_refiner(rng) if config.mask_ablation != "N3" else None
        qa = config.query_ablation
        if qa == "M1":
            self.query = ConcatQuery(7 * e, config.moe.d_q, rng)
        else:
            moe_cfg = dataclasses.replace(
                config.moe, pairwise=config.moe.pairwise and qa == "M4",
                holiday_enhancement=config.moe.holiday_enhancement and qa in ("M3", "M4"))
            self.query = QueryMoE({"hour": e, "week": e, "loc": e, "item": 3 * e}, moe_cfg, rng)
        self.hmin = HMIN(config.hmin, rng)
        self.n_queries = 1 if qa in ("M1", "M2", "M3") else config.moe.n_queries
        feat_dim = 3 * self.n_queries * config.hmin.out_dim + self.context_dim
        self._build_heads(feat_dim, rng)

    def queries(self, batch):
        if isinstance(self.query, ConcatQuery):
            x, ec = self.embed.lookup(_context_pairs(batch))
            qs, qc = self.query.forward(x)
            return qs, ("concat", ec, qc)
        pairs = {
            "hour": [("hour", batch["req_hour"])],
            "week": [("weekday", batch["req_weekday"])],
            "loc": [("geo", batch["req_geo"])],
            "item": [("item", batch["tgt_item"]), ("cat", batch["tgt_cat"]), ("shop", batch["tgt_shop"])],
        }
        slices, ecs = {}, {}
        for part, p in pairs.items():
            slices[part], ecs[part] = self.embed.lookup(p)
        qs, qc = self.query.forward(slices, batch["holiday"])
        return qs, ("moe", ecs, qc)

    def refined_masks(self, batch):
        valid = batch["valid"].astype(np.float64)[:, :, None]
        if self.refiner is None:
            return batch["masks"] * valid, None
        m, rc = self.refiner.forward(batch["masks"])
        return m * valid, rc

    def forward(self, batch):
        valid = batch["valid"]
        seq_x, seq_c = self.embed.lookup([
            ("item", batch["seq_item"]), ("cat", batch["seq_cat"]), ("shop", batch["seq_shop"]),
            ("hour", batch["seq_hour"]), ("weekday", batch["seq_weekday"]), ("geo", batch["seq_geo"]),
        ])
        K, kc = self.key_proj.forward(seq_x)
        masks, rc = self.refined_masks(batch)
        qs, qcache = self.queries(batch)
        outputs, hc = self.hmin.forward(K, qs, masks, valid)
        ctx, ctx_c = self.embed.lookup(_context_pairs(batch, self.config.scene_in_head))
        feat = np.concatenate(outputs + [ctx], axis=-1)
        return feat, (seq_c, kc, rc, valid, qcache, hc, ctx_c, len(outputs))

    def backward(self, cache, g_feat: np.ndarray) -> None:
        seq_c, kc, rc, valid, qcache, hc, ctx_c, n_out = cache
        d = self.config.hmin.out_dim
        g_outputs = [g_feat[:, i * d:(i + 1) * d] for i in range(n_out)]
        self.embed.backward(ctx_c, g_feat[:, n_out * d:])
        g_K, g_qs, g_masks = self.hmin.backward(hc, g_outputs)
        if self.refiner is not None:
            self.refiner.backward(rc, g_masks * valid[:, :, None])
        kind, ecs, qc = qcache
        if kind == "concat":
            self.embed.backward(ecs, self.query.backward(qc, g_qs))
        else:
            g_slices = self.query.backward(qc, g_qs)
            for part, g in g_slices.items():
                self.embed.backward(ecs[part], g)
        self.embed.backward(seq_c, self.key_proj.backward(kc, g_K))


class GSUBaseline(_RankingModel):
    """GSU compression plus mean pooling of item/category/shop keys."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        e = config.embed_dim
        self.embed = EmbeddingBank(config, rng)
        self.key_proj = Linear(3 * e, config.hmin.d_k, rng)
        self._build_heads(config.hmin.d_k + self.context_dim, rng)

    def forward(self, batch):
        valid = batch["valid"].astype(np.float64)
        seq_x, seq_c = self.embed.lookup([
            ("item", batch["seq_item"]), ("cat", batch["seq_cat"]), ("shop", batch["seq_shop"])])
        K, kc = self.key_proj.forward(seq_x)
        count = np.maximum(valid.sum(axis=1, keepdims=True), 1.0)
        pooled = np.einsum("bl,bld->bd", valid, K) / count
        ctx, ctx_c = self.embed.lookup(_context_pairs(batch, self.config.scene_in_head))
        feat = np.concatenate([pooled, ctx], axis=-1)
        return feat, (seq_c, kc, valid, count, ctx_c)

    def backward(self, cache, g_feat: np.ndarray) -> None:
        seq_c, kc, valid, count, ctx_c = cache
        d = self.config.hmin.d_k
        self.embed.backward(ctx_c, g_feat[:, d:])
        g_K = valid[:, :, None] * (g_feat[:, None, :d] / count[:, :, None])
        self.embed.backward(seq_c, self.key_proj.backward(kc, g_K))


def build_model(config: ModelConfig) -> _RankingModel:
    """Model for ``config``, with its ablation switches wired in."""
    return STIM(config) if config.architecture == "stim" else GSUBaseline(config)


apply_ablation = build_model


def load_model(path) -> _RankingModel:
    raw_config, tensors = load_checkpoint(path)
    model = build_model(ModelConfig.from_dict(raw_config))
    model.load_state(tensors)
    return model


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _describe_row(batch, row: int) -> str:
    parts = []
    for name, arr in batch.items():
        v = arr[row]
        parts.append(f"{name}={v.tolist() if isinstance(v, np.ndarray) else v}")
    return "; ".join(parts)


def train_step(model: _RankingModel, batch, optimizer) -> float:
    """One optimizer step on ``batch``; returns the pre-step loss."""
    params = model.parameters()
    for p in params.values():
        p.zero_grad()
    loss = model.loss_and_grad(batch)
    if not np.isfinite(loss):
        logits = model.logits(batch)
        bad = next((int(np.flatnonzero(~np.isfinite(z))[0]) for z in logits.values() if not np.all(np.isfinite(z))), 0)
        raise TrainingError(f"non-finite loss {loss}; offending row {bad}: {_describe_row(batch, bad)}")
    optimizer.step(params)
    for p in params.values():
        p.zero_grad()
    return loss


@dataclass
class TrainResult:
    losses: List[float]
    epoch_losses: List[float]
    diverged: bool = False
    error: str = ""


def fit(model: _RankingModel, data: Mapping[str, np.ndarray], epochs: Optional[int] = None,
        batch_size: Optional[int] = None, lr: Optional[float] = None, seed: Optional[int] = None,
        optimizer=None) -> TrainResult:
    """Minibatch training with per-epoch shuffling (seeded)."""
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    batch_size = cfg.batch_size if batch_size is None else batch_size
    optimizer = optimizer or make_optimizer(cfg.optimizer, cfg.lr if lr is None else lr, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    n = batch_size_of(data)
    losses, epoch_losses = [], []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            rows = order[start:start + batch_size]
            try:
                loss = train_step(model, take_rows(data, rows), optimizer)
            except TrainingError as exc:
                log.warning("training diverged: %s", exc)
                return TrainResult(losses, epoch_losses, diverged=True, error=str(exc))
            losses.append(loss)
            total += loss * len(rows)
        epoch_losses.append(total / max(n, 1))
        log.info("epoch %d loss %.5f", epoch + 1, epoch_losses[-1])
    return TrainResult(losses, epoch_losses)


def predict_all(model: _RankingModel, data: Mapping[str, np.ndarray], batch_size: int = 2048) -> Dict[str, np.ndarray]:
    n = batch_size_of(data)
    chunks: Dict[str, List[np.ndarray]] = {t: [] for t in model.config.tasks}
    for start in range(0, n, batch_size):
        pred = model.predict(take_rows(data, slice(start, start + batch_size)))
        for t, p in pred.items():
            chunks[t].append(p)
    return {t: np.concatenate(c) if c else np.zeros(0) for t, c in chunks.items()}

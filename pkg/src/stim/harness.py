"""Evaluation reports and the ablation / sweep harness.

Every variant in a suite is trained on the same encoded split with the same
seed list, so rows differ only in the switch under study. Divergence is
recorded in the table instead of aborting the suite.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, UndefinedMetricError
from .events import Example
from .forgetting import FAMILIES, CurveParams
from .metrics import auc, gauc
from .model import ModelConfig, batch_size_of, build_model, encode_examples, fit, predict_all

log = logging.getLogger(__name__)

FAMILY_NAMES = ("curve", "N", "M", "grid")


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    slice_name: str
    rows: int
    positives: Dict[str, int]
    auc: Dict[str, float]
    gauc: Dict[str, float]
    fingerprint: str

    def as_row(self) -> Dict[str, object]:
        row: Dict[str, object] = {"slice": self.slice_name, "rows": self.rows}
        for task in sorted(self.auc):
            row[f"positives_{task}"] = self.positives[task]
            row[f"auc_{task}"] = _fmt(self.auc[task])
            row[f"gauc_{task}"] = _fmt(self.gauc[task])
        row["fingerprint"] = self.fingerprint
        return row


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


def _safe(metric, *args) -> float:
    try:
        return metric(*args)
    except UndefinedMetricError:
        return float("nan")


def evaluate(model, data: Mapping[str, np.ndarray], slice_name: str = "test") -> MetricsReport:
    """AUC and user-level GAUC for every task the model predicts.

    Undefined metrics (one class only, or an empty slice) come back as NaN.
    """
    n = batch_size_of(data)
    preds = predict_all(model, data) if n else {t: np.zeros(0) for t in model.config.tasks}
    aucs, gaucs, positives = {}, {}, {}
    for task, p in preds.items():
        y = data[f"y_{task}"]
        positives[task] = int(y.sum())
        aucs[task] = _safe(auc, p, y)
        gaucs[task] = _safe(gauc, p, y, data["user"])
    return MetricsReport(slice_name, n, positives, aucs, gaucs, model.config.fingerprint())


# ---------------------------------------------------------------------------
# variants
# ---------------------------------------------------------------------------

@dataclass
class Variant:
    name: str
    config: ModelConfig


@dataclass
class SweepSpec:
    """Grid over curve hyperparameters; combinations with r_init > r_final are dropped."""

    r_init: Tuple[float, ...] = (0.2, 0.4)
    r_final: Tuple[float, ...] = (0.7, 0.9)
    S: Tuple[float, ...] = (20.0,)
    I: Tuple[float, ...] = (2.0,)
    families: Tuple[str, ...] = ("exponential",)

    def __post_init__(self):
        for name in ("r_init", "r_final", "S", "I", "families"):
            values = tuple(getattr(self, name))
            if not values:
                raise ConfigError(f"sweep grid {name!r} is empty")
            setattr(self, name, values)

    def points(self) -> List[Dict[str, object]]:
        out = []
        for fam, ri, rf, s, i in itertools.product(self.families, self.r_init, self.r_final, self.S, self.I):
            if ri <= rf:
                out.append({"family": fam, "r_init": ri, "r_final": rf, "S": s, "I": i})
        return out

    @classmethod
    def from_dict(cls, raw: Mapping) -> "SweepSpec":
        try:
            return cls(**{k: tuple(v) for k, v in raw.items()})
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _with_curves(config: ModelConfig, **params) -> ModelConfig:
    curves = {m: c.with_(**params) for m, c in config.curves.items()}
    return config.replace(curves=curves)


def curve_variants(config: ModelConfig) -> List[Variant]:
    return [Variant(fam, _with_curves(config, family=fam)) for fam in FAMILIES]


def mask_variants(config: ModelConfig) -> List[Variant]:
    keep = tuple(a for a in config.ablations if not a.startswith("N"))
    return [Variant(n, config.replace(ablations=keep + (n,))) for n in ("N1", "N2", "N3", "N4")]


def query_variants(config: ModelConfig) -> List[Variant]:
    keep = tuple(a for a in config.ablations if not a.startswith("M"))
    return [Variant(m, config.replace(ablations=keep + (m,))) for m in ("M1", "M2", "M3", "M4")]


def grid_variants(config: ModelConfig, sweep: Optional[SweepSpec] = None) -> List[Variant]:
    sweep = sweep or SweepSpec()
    out = []
    for p in sweep.points():
        name = f"{p['family']}:r_init={p['r_init']},r_final={p['r_final']},S={p['S']},I={p['I']}"
        out.append(Variant(name, _with_curves(config, **p)))
    return out


def baseline_variant(config: ModelConfig) -> Variant:
    return Variant("GSU", config.replace(architecture="gsu", ablations=()))


def variants_for(family: str, config: ModelConfig, sweep: Optional[SweepSpec] = None,
                 baseline: bool = False) -> List[Variant]:
    if family == "curve":
        out = curve_variants(config)
    elif family == "N":
        out = mask_variants(config)
    elif family == "M":
        out = query_variants(config)
    elif family == "grid":
        out = grid_variants(config, sweep)
    else:
        raise ConfigError(f"unknown ablation family {family!r}; expected one of {FAMILY_NAMES}")
    return ([baseline_variant(config)] if baseline else []) + out


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------

def _encoding_key(config: ModelConfig):
    """Everything :func:`encode_examples` depends on."""
    curves = tuple(sorted((m, tuple(sorted(asdict(c).items()))) for m, c in config.curves.items()))
    return (config.k, config.mask_variant, config.time_mapping, config.geo_lead, config.geo_split_after, curves)


class EncodingCache:
    """Encode a (train, test) split once per distinct masking setup."""

    def __init__(self, train: Sequence[Example], test: Sequence[Example]):
        self.train = list(train)
        self.test = list(test)
        self._store: Dict[tuple, Tuple[dict, dict]] = {}

    def get(self, config: ModelConfig) -> Tuple[dict, dict]:
        key = _encoding_key(config)
        if key not in self._store:
            self._store[key] = (encode_examples(self.train, config), encode_examples(self.test, config))
        return self._store[key]


@dataclass
class AblationTable:
    rows: List[Dict[str, object]] = field(default_factory=list)
    significance: List[Dict[str, object]] = field(default_factory=list)

    @property
    def columns(self) -> List[str]:
        cols: List[str] = []
        for row in self.rows:
            for c in row:
                if c not in cols:
                    cols.append(c)
        return cols

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.columns)
            writer.writeheader()
            writer.writerows(self.rows)

    def write_significance_csv(self, path) -> None:
        cols = ["variant", "reference", "task", "seeds", "mean_diff", "t", "p_value"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            writer.writerows(self.significance)

    def pretty(self) -> str:
        cols = self.columns
        cells = [[str(r.get(c, "")) for c in cols] for r in self.rows]
        widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(cols)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
        if self.significance:
            lines.append("")
            lines.append("paired t-test across seeds (AUC, variant - reference):")
            for s in self.significance:
                lines.append(f"  {s['variant']} vs {s['reference']} [{s['task']}]: mean diff {s['mean_diff']}, "
                             f"t={s['t']}, p={s['p_value']} over {s['seeds']} seeds")
        return "\n".join(lines)

    def metric(self, variant: str, column: str = "auc_ctr") -> List[float]:
        """Per-seed values of ``column`` for ``variant`` in row order."""
        return [float(r[column]) for r in self.rows if r["variant"] == variant]


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> Tuple[float, float]:
    """Two-sided paired t-test of ``a - b``; NaN when undefined."""
    from scipy import stats

    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    ok = ~(np.isnan(a) | np.isnan(b))
    d = a[ok] - b[ok]
    if len(d) < 2 or np.all(d == d[0]):
        return float("nan"), float("nan")
    res = stats.ttest_rel(a[ok], b[ok])
    return float(res.statistic), float(res.pvalue)


def run_variant(variant: Variant, cache: EncodingCache, seed: int) -> Dict[str, object]:
    cfg = variant.config.replace(seed=seed)
    train, test = cache.get(cfg)
    model = build_model(cfg)
    result = fit(model, train)
    row: Dict[str, object] = {"variant": variant.name, "seed": seed, "train_rows": batch_size_of(train)}
    if result.diverged:
        row.update({"test_rows": batch_size_of(test), "diverged": 1, "final_loss": "nan"})
        for task in cfg.tasks:
            row[f"auc_{task}"] = "nan"
            row[f"gauc_{task}"] = "nan"
        row["error"] = result.error.split(";")[0]
    else:
        report = evaluate(model, test)
        row.update({"test_rows": report.rows, "diverged": 0, "final_loss": f"{result.epoch_losses[-1]:.6f}"})
        for task in cfg.tasks:
            row[f"auc_{task}"] = _fmt(report.auc[task])
            row[f"gauc_{task}"] = _fmt(report.gauc[task])
        row["error"] = ""
    row["fingerprint"] = cfg.fingerprint()
    return row


def run_ablation_suite(config: ModelConfig, dataset, variants: Sequence[Variant],
                       seeds: Iterable[int] = (0,), reference: Optional[str] = None) -> AblationTable:
    """Train and evaluate every variant under every seed on one split.

    ``dataset`` is a ``(train_examples, test_examples)`` pair or an
    :class:`EncodingCache`. With two or more seeds a paired t-test of each
    variant against ``reference`` (default: the last variant, the full model
    in the N/M families) is attached.
    """
    if not variants:
        raise ConfigError("no variants to run")
    cache = dataset if isinstance(dataset, EncodingCache) else EncodingCache(*dataset)
    seeds = list(seeds)
    table = AblationTable()
    for variant in variants:
        for seed in seeds:
            log.info("variant %s seed %d", variant.name, seed)
            table.rows.append(run_variant(variant, cache, seed))
    if len(seeds) >= 2 and len(variants) >= 2:
        ref = reference or variants[-1].name
        for variant in variants:
            if variant.name == ref:
                continue
            for task in config.tasks:
                col = f"auc_{task}"
                a, b = table.metric(variant.name, col), table.metric(ref, col)
                t, p = paired_t_test(a, b)
                diff = np.nanmean(np.subtract(a, b)) if a else float("nan")
                table.significance.append({
                    "variant": variant.name, "reference": ref, "task": task, "seeds": len(seeds),
                    "mean_diff": _fmt(float(diff)), "t": _fmt(t), "p_value": _fmt(p),
                })
    return table

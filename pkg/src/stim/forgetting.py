"""Forgetting-curve dynamic masks.

For each material (hour, week, geo) the positions of the compressed sequence
sharing the request's group are review points. Walking from the most recent
event backwards, retention follows the base curve until the first review
point, then restarts at a lower peak with a faster decay at every further
review point. The resulting trajectory is min-max scaled per sequence and the
three material masks are mixed position-wise by one learnable sigmoid layer.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .context import DEFAULT_GEO_RULE, GeoRule, Material
from .errors import ConfigError
from .events import CompressedSequence, RequestContext
from .numeric import FeedForwardBlock

FAMILIES = ("exponential", "power", "logarithmic")
TIME_MAPPINGS = ("rescaled", "index")
# mask variants: full model, no review points, review points with identical peaks
MASK_VARIANTS = ("review", "decay_only", "flat_review")


@dataclass(frozen=True)
class CurveParams:
    family: str = "exponential"
    S: float = 20.0
    I: float = 2.0
    r_init: float = 0.4
    r_final: float = 0.9
    # power family: (1 + k_p t) ** m_p
    k_p: float = 0.1
    m_p: float = -1.5
    # logarithmic family: a_l - b_l ln(t + c_l)
    a_l: float = 1.0
    b_l: float = 0.25
    c_l: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown curve family {self.family!r}; expected one of {FAMILIES}")
        if not self.S > 0:
            raise ConfigError(f"S must be > 0, got {self.S}")
        if self.I < 0:
            raise ConfigError(f"I must be >= 0, got {self.I}")
        if not (0 < self.r_init <= 1 and 0 < self.r_final <= 1):
            raise ConfigError(f"r_init and r_final must lie in (0, 1], got {self.r_init}, {self.r_final}")
        if self.r_init > self.r_final:
            raise ConfigError(f"r_init ({self.r_init}) must not exceed r_final ({self.r_final})")
        if self.family == "logarithmic" and not self.c_l > 0:
            raise ConfigError(f"logarithmic curve needs c_l > 0, got {self.c_l}")
        if self.family == "power" and self.k_p < 0:
            raise ConfigError(f"power curve needs k_p >= 0, got {self.k_p}")

    def with_(self, **changes) -> "CurveParams":
        return replace(self, **changes)


def base_retention(t, params: CurveParams):
    """Retention before any review, clamped to [0, 1]. Accepts scalars or arrays."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ConfigError("retention time must be >= 0")
    if params.family == "exponential":
        r = np.exp(-t_arr / params.S)
    elif params.family == "power":
        r = np.power(1.0 + params.k_p * t_arr, params.m_p)
    else:
        r = params.a_l - params.b_l * np.log(t_arr + params.c_l)
    r = np.clip(r, 0.0, 1.0)
    return float(r) if np.ndim(r) == 0 else r


def review_retention_schedule(params: CurveParams, n: int) -> List[Tuple[float, float]]:
    """Peak ``R_i`` and decay rate ``D_i`` for reviews ``i = 1..n`` (most recent first).

    Peaks fall linearly from ``r_final`` to ``r_init``; ``D_i = (1 + i*I)/S``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    out = []
    for i in range(1, n + 1):
        if n == 1:
            r = params.r_final
        else:
            r = params.r_final - (params.r_final - params.r_init) * (i - 1) / (n - 1)
        out.append((r, (1.0 + i * params.I) / params.S))
    return out


@dataclass
class ReviewSchedule:
    material: Material
    positions: np.ndarray  # most recent first

    @property
    def n(self) -> int:
        return len(self.positions)


def find_review_points(seq: CompressedSequence, request: RequestContext, material: Material,
                       rule: GeoRule = DEFAULT_GEO_RULE) -> ReviewSchedule:
    target = request.groups(rule).of(material)
    groups = seq.material_groups(material, rule)
    hits = np.flatnonzero(seq.valid_mask & (groups == int(target)))
    return ReviewSchedule(Material(material), hits[::-1].copy())


def raw_gaps(seq: CompressedSequence, request_timestamp: float) -> np.ndarray:
    """Seconds between each valid event and the request; padding gets 0."""
    gaps = np.where(seq.valid_mask, request_timestamp - seq.events.timestamps, 0.0)
    return np.maximum(gaps, 0.0)


def event_times(seq: CompressedSequence, request_timestamp: Optional[float] = None,
                mapping: str = "rescaled") -> np.ndarray:
    """Curve time ``t`` per slot.

    ``rescaled`` maps the valid gaps affinely onto ``[0, k]`` (most recent
    event at 0); ``index`` counts events back from the most recent one.
    Padding slots get 0.
    """
    if mapping not in TIME_MAPPINGS:
        raise ConfigError(f"unknown time mapping {mapping!r}")
    valid = seq.valid_mask
    t = np.zeros(seq.k)
    n = int(valid.sum())
    if n == 0:
        return t
    if mapping == "index":
        idx = np.flatnonzero(valid)
        t[idx] = np.arange(n - 1, -1, -1, dtype=np.float64)
        return t
    ref = request_timestamp if request_timestamp is not None else seq.events.timestamps[valid].max()
    gaps = raw_gaps(seq, ref)[valid]
    lo, hi = gaps.min(), gaps.max()
    t[valid] = seq.k * (gaps - lo) / (hi - lo) if hi > lo else 0.0
    return t


def retention_trajectory(seq: CompressedSequence, schedule: ReviewSchedule, params: CurveParams,
                         times: Optional[np.ndarray] = None, flat_peaks: bool = False) -> np.ndarray:
    """Retention per slot under the recommendation-variant forgetting curve.

    ``flat_peaks`` gives every review the same peak ``r_final``.
    """
    if times is None:
        times = event_times(seq)
    out = np.zeros(seq.k)
    valid_positions = np.flatnonzero(seq.valid_mask)[::-1]  # most recent first
    if len(valid_positions) == 0:
        return out
    review_index = {int(p): i for i, p in enumerate(schedule.positions)}
    peaks = review_retention_schedule(params, schedule.n) if schedule.n else []
    current = None  # (peak, rate, t_last)
    for pos in valid_positions:
        t = times[pos]
        i = review_index.get(int(pos))
        if i is not None:
            r, d = peaks[i]
            current = (params.r_final if flat_peaks else r, d, t)
        if current is None:
            out[pos] = base_retention(t, params)
        else:
            r, d, t_last = current
            out[pos] = r * math.exp(-(t - t_last) * d)
    return out


def normalize_mask(raw: np.ndarray, valid_mask: np.ndarray) -> np.ndarray:
    """Min-max scale over valid slots; all-equal valid values map to 1, padding to 0."""
    raw = np.asarray(raw, dtype=np.float64)
    valid = np.asarray(valid_mask, dtype=bool)
    out = np.zeros_like(raw)
    if not valid.any():
        return out
    vals = raw[valid]
    lo, hi = vals.min(), vals.max()
    out[valid] = (vals - lo) / (hi - lo) if hi > lo else 1.0
    return out


DEFAULT_CURVES: Dict[Material, CurveParams] = {m: CurveParams() for m in Material}


@dataclass
class MaskSet:
    M_h: np.ndarray
    M_w: np.ndarray
    M_g: np.ndarray
    valid: np.ndarray
    M_refined: Optional[np.ndarray] = None

    def stacked(self) -> np.ndarray:
        """``k x 3`` matrix in (hour, week, geo) column order."""
        return np.stack([self.M_h, self.M_w, self.M_g], axis=-1)


def build_masks(
    seq: CompressedSequence,
    request: RequestContext,
    curves: Mapping[Material, CurveParams] = DEFAULT_CURVES,
    variant: str = "review",
    mapping: str = "rescaled",
    rule: GeoRule = DEFAULT_GEO_RULE,
) -> MaskSet:
    """Normalized per-material masks for one compressed sequence."""
    if variant not in MASK_VARIANTS:
        raise ConfigError(f"unknown mask variant {variant!r}")
    times = event_times(seq, request.timestamp, mapping)
    masks = []
    for material in Material:
        if variant == "decay_only":
            schedule = ReviewSchedule(material, np.zeros(0, dtype=np.int64))
        else:
            schedule = find_review_points(seq, request, material, rule)
        raw = retention_trajectory(seq, schedule, curves[material], times, flat_peaks=variant == "flat_review")
        masks.append(normalize_mask(raw, seq.valid_mask))
    return MaskSet(masks[0], masks[1], masks[2], seq.valid_mask.copy())


def make_refiner(rng: Optional[np.random.Generator] = None) -> FeedForwardBlock:
    """Single 3 -> 3 sigmoid layer mixing the three material masks per position."""
    return FeedForwardBlock(3, hidden=(), in_dim=3, output_activation="sigmoid", rng=rng)


def refine_masks(M_h, M_w, M_g, refiner: FeedForwardBlock, valid=None) -> np.ndarray:
    """Map each position's (hour, week, geo) mask triple through ``refiner``.

    Works on ``(k,)`` or batched ``(B, k)`` inputs; returns ``(..., k, 3)``
    with padding rows forced to 0.
    """
    stacked = np.stack([np.asarray(M_h), np.asarray(M_w), np.asarray(M_g)], axis=-1)
    out = refiner(stacked)
    if valid is not None:
        out = out * np.asarray(valid, dtype=np.float64)[..., None]
    return out


# ---------------------------------------------------------------------------
# trajectory dump
# ---------------------------------------------------------------------------

TRAJECTORY_HEADER = ("position", "gap", "t", "material", "retention", "review")


def dump_trajectory(
    seq: CompressedSequence,
    request: RequestContext,
    curves: Mapping[Material, CurveParams] = DEFAULT_CURVES,
    mapping: str = "rescaled",
    rule: GeoRule = DEFAULT_GEO_RULE,
) -> List[dict]:
    """One row per (material, position) with the raw retention trajectory."""
    gaps = raw_gaps(seq, request.timestamp)
    times = event_times(seq, request.timestamp, mapping)
    rows = []
    for material in Material:
        schedule = find_review_points(seq, request, material, rule)
        retention = retention_trajectory(seq, schedule, curves[material], times)
        reviews = set(int(p) for p in schedule.positions)
        for pos in range(seq.k):
            rows.append({
                "position": pos,
                "gap": float(gaps[pos]),
                "t": float(times[pos]),
                "material": material.name.lower(),
                "retention": float(retention[pos]),
                "review": pos in reviews,
            })
    return rows


def write_trajectory_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAJECTORY_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "review": int(row["review"])})

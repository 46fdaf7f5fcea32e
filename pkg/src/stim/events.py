"""Behavior events, columnar sequences and the request context."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, Union

import numpy as np

from .context import (
    DEFAULT_GEO_RULE,
    GeoRule,
    GroupAssignment,
    HOUR_GROUP_TABLE,
    Material,
    WEEK_GROUP_TABLE,
    assign_geo_group,
    assign_groups,
    time_fields,
)

PAD_ID = 0


@dataclass(frozen=True)
class BehaviorEvent:
    item_id: int
    category_id: int
    shop_id: int
    timestamp: float
    hour_of_day: int
    weekday: int
    geohash6: str
    price: Optional[float] = None

    @classmethod
    def at(cls, item_id: int, category_id: int, shop_id: int, timestamp: float,
           geohash6: str, price: Optional[float] = None) -> "BehaviorEvent":
        """Build an event whose hour and weekday come from ``timestamp`` (UTC)."""
        hour, weekday, _ = time_fields(timestamp)
        return cls(item_id, category_id, shop_id, float(timestamp), hour, weekday, geohash6, price)

    def groups(self, rule: GeoRule = DEFAULT_GEO_RULE) -> GroupAssignment:
        return assign_groups(self.hour_of_day, self.weekday, self.geohash6, rule)


_COLUMNS = ("item_ids", "category_ids", "shop_ids", "timestamps", "hours", "weekdays", "geohashes", "prices")


@dataclass
class BehaviorSequence:
    """Chronologically ordered events stored column-wise."""

    item_ids: np.ndarray
    category_ids: np.ndarray
    shop_ids: np.ndarray
    timestamps: np.ndarray
    hours: np.ndarray
    weekdays: np.ndarray
    geohashes: np.ndarray
    prices: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.item_ids = np.asarray(self.item_ids, dtype=np.int64)
        self.category_ids = np.asarray(self.category_ids, dtype=np.int64)
        self.shop_ids = np.asarray(self.shop_ids, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.hours = np.asarray(self.hours, dtype=np.int64)
        self.weekdays = np.asarray(self.weekdays, dtype=np.int64)
        self.geohashes = np.asarray(self.geohashes, dtype="<U12")
        if self.prices is None:
            self.prices = np.full(len(self.item_ids), np.nan)
        self.prices = np.asarray(self.prices, dtype=np.float64)
        n = len(self.item_ids)
        for name in _COLUMNS:
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has length {len(getattr(self, name))}, expected {n}")

    @classmethod
    def empty(cls) -> "BehaviorSequence":
        return cls([], [], [], [], [], [], [])

    @classmethod
    def from_events(cls, events: Iterable[BehaviorEvent]) -> "BehaviorSequence":
        events = list(events)
        return cls(
            [e.item_id for e in events],
            [e.category_id for e in events],
            [e.shop_id for e in events],
            [e.timestamp for e in events],
            [e.hour_of_day for e in events],
            [e.weekday for e in events],
            [e.geohash6 for e in events],
            [np.nan if e.price is None else e.price for e in events],
        )

    def __len__(self) -> int:
        return len(self.item_ids)

    def __getitem__(self, i: int) -> BehaviorEvent:
        price = float(self.prices[i])
        return BehaviorEvent(
            int(self.item_ids[i]), int(self.category_ids[i]), int(self.shop_ids[i]),
            float(self.timestamps[i]), int(self.hours[i]), int(self.weekdays[i]),
            str(self.geohashes[i]), None if np.isnan(price) else price,
        )

    def __iter__(self) -> Iterator[BehaviorEvent]:
        for i in range(len(self)):
            yield self[i]

    def take(self, index: np.ndarray) -> "BehaviorSequence":
        return BehaviorSequence(*(getattr(self, name)[index] for name in _COLUMNS))

    def tail(self, n: int) -> "BehaviorSequence":
        return self.take(np.arange(max(0, len(self) - n), len(self)))


def as_sequence(seq: Union[BehaviorSequence, Sequence[BehaviorEvent]]) -> BehaviorSequence:
    return seq if isinstance(seq, BehaviorSequence) else BehaviorSequence.from_events(seq)


@dataclass
class CompressedSequence:
    """Fixed-length sequence: valid events first (oldest to newest), padding after."""

    events: BehaviorSequence  # length k, padded rows filled with zeros / ""
    valid_mask: np.ndarray
    k: int

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())

    def valid_events(self) -> List[BehaviorEvent]:
        return [self.events[i] for i in np.flatnonzero(self.valid_mask)]

    def material_groups(self, material: Material, rule: GeoRule = DEFAULT_GEO_RULE) -> np.ndarray:
        """Group index per slot for one material; padding slots get -1."""
        out = np.full(self.k, -1, dtype=np.int64)
        idx = np.flatnonzero(self.valid_mask)
        material = Material(material)
        if material == Material.HOUR:
            out[idx] = HOUR_GROUP_TABLE[self.events.hours[idx]]
        elif material == Material.WEEK:
            out[idx] = WEEK_GROUP_TABLE[self.events.weekdays[idx]]
        else:
            out[idx] = [assign_geo_group(str(g), rule) for g in self.events.geohashes[idx]]
        return out


@dataclass
class RequestContext:
    timestamp: float
    hour_of_day: int
    weekday: int
    geohash6: str
    is_holiday: int = 0
    item_id: int = PAD_ID
    category_id: int = PAD_ID
    shop_id: int = PAD_ID

    @classmethod
    def at(cls, timestamp: float, geohash6: str, item_id: int = PAD_ID, category_id: int = PAD_ID,
           shop_id: int = PAD_ID, calendar=None) -> "RequestContext":
        hour, weekday, date = time_fields(timestamp)
        holiday = int(calendar is not None and date in calendar)
        return cls(float(timestamp), hour, weekday, geohash6, holiday, item_id, category_id, shop_id)

    def groups(self, rule: GeoRule = DEFAULT_GEO_RULE) -> GroupAssignment:
        return assign_groups(self.hour_of_day, self.weekday, self.geohash6, rule)


@dataclass
class Example:
    """One labelled request: raw history, request context, extra features, labels."""

    sequence: BehaviorSequence
    request: RequestContext
    labels: dict = field(default_factory=dict)
    user_id: int = 0
    features: dict = field(default_factory=dict)

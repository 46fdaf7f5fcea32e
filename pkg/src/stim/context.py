"""Spatiotemporal vocabulary: geohash codec, hour/week/geo groups, holidays.

Timestamps are seconds since the Unix epoch and are read as UTC.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import FrozenSet, Iterable, Tuple, Union

import numpy as np

GEOHASH_ALPHABET = "0123456789bcdefghjkmnpqrstuvwxyz"
_GEOHASH_INDEX = {c: i for i, c in enumerate(GEOHASH_ALPHABET)}


class DomainError(ValueError):
    pass


class HourGroup(IntEnum):
    MORNING = 0
    MIDDAY = 1
    NIGHT = 2


class WeekGroup(IntEnum):
    WEEKDAY = 0
    WEEKEND = 1


class GeoGroup(IntEnum):
    NON_W = 0
    W_0J = 1
    W_KZ = 2


class Weekday(IntEnum):
    MON = 0
    TUE = 1
    WED = 2
    THU = 3
    FRI = 4
    SAT = 5
    SUN = 6


class Material(IntEnum):
    HOUR = 0
    WEEK = 1
    GEO = 2


@dataclass(frozen=True)
class GroupAssignment:
    hour_group: HourGroup
    week_group: WeekGroup
    geo_group: GeoGroup

    def of(self, material: Material) -> int:
        return (self.hour_group, self.week_group, self.geo_group)[Material(material)]


@dataclass(frozen=True)
class GeoRule:
    """Two-level geohash split: a leading character, then the second
    character cut at ``split_after`` in geohash alphabet order."""

    lead: str = "w"
    split_after: str = "j"

    def __post_init__(self):
        for ch in (self.lead, self.split_after):
            if len(ch) != 1 or ch not in _GEOHASH_INDEX:
                raise DomainError(f"geo rule character {ch!r} is not in the geohash alphabet")


DEFAULT_GEO_RULE = GeoRule()


def assign_hour_group(hour: int) -> HourGroup:
    """Morning 3-10, Midday 11-16, Night 17-23 and 0-2."""
    if not isinstance(hour, (int, np.integer)) or not 0 <= hour <= 23:
        raise DomainError(f"hour of day must be an integer in 0..23, got {hour!r}")
    if 3 <= hour <= 10:
        return HourGroup.MORNING
    if 11 <= hour <= 16:
        return HourGroup.MIDDAY
    return HourGroup.NIGHT


# lookup table for vectorized use, indexed by hour
HOUR_GROUP_TABLE = np.array([assign_hour_group(h) for h in range(24)], dtype=np.int64)


def assign_week_group(weekday: Union[int, Weekday]) -> WeekGroup:
    day = Weekday(int(weekday))
    return WeekGroup.WEEKEND if day >= Weekday.SAT else WeekGroup.WEEKDAY


WEEK_GROUP_TABLE = np.array([assign_week_group(d) for d in range(7)], dtype=np.int64)


def _validate_geohash(code: str, length: int | None = None) -> str:
    if not isinstance(code, str) or not code:
        raise DomainError(f"geohash must be a non-empty string, got {code!r}")
    code = code.lower()
    bad = [c for c in code if c not in _GEOHASH_INDEX]
    if bad:
        raise DomainError(f"geohash {code!r} contains characters outside the base-32 alphabet: {bad}")
    if length is not None and len(code) != length:
        raise DomainError(f"expected a geohash of length {length}, got {code!r}")
    return code


def assign_geo_group(geohash6: str, rule: GeoRule = DEFAULT_GEO_RULE) -> GeoGroup:
    code = _validate_geohash(geohash6, 6)
    if code[0] != rule.lead:
        return GeoGroup.NON_W
    if _GEOHASH_INDEX[code[1]] <= _GEOHASH_INDEX[rule.split_after]:
        return GeoGroup.W_0J
    return GeoGroup.W_KZ


def assign_groups(hour: int, weekday: int, geohash6: str, rule: GeoRule = DEFAULT_GEO_RULE) -> GroupAssignment:
    return GroupAssignment(assign_hour_group(hour), assign_week_group(weekday), assign_geo_group(geohash6, rule))


# ---------------------------------------------------------------------------
# geohash codec
# ---------------------------------------------------------------------------

def geohash_encode(lat: float, lon: float, precision: int = 6) -> str:
    if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
        raise DomainError(f"coordinates out of range: ({lat}, {lon})")
    if not 1 <= precision <= 12:
        raise DomainError(f"precision must be in 1..12, got {precision}")
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    chars = []
    bits = 0
    nbits = 0
    even = True  # bits alternate lon, lat, lon, ...
    while len(chars) < precision:
        if even:
            mid = (lon_lo + lon_hi) / 2
            if lon >= mid:
                bits = (bits << 1) | 1
                lon_lo = mid
            else:
                bits <<= 1
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2
            if lat >= mid:
                bits = (bits << 1) | 1
                lat_lo = mid
            else:
                bits <<= 1
                lat_hi = mid
        even = not even
        nbits += 1
        if nbits == 5:
            chars.append(GEOHASH_ALPHABET[bits])
            bits = 0
            nbits = 0
    return "".join(chars)


def geohash_bounds(code: str) -> Tuple[float, float, float, float]:
    """Cell bounding box as ``(lat_min, lat_max, lon_min, lon_max)``."""
    code = _validate_geohash(code)
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    even = True
    for c in code:
        v = _GEOHASH_INDEX[c]
        for shift in range(4, -1, -1):
            bit = (v >> shift) & 1
            if even:
                mid = (lon_lo + lon_hi) / 2
                if bit:
                    lon_lo = mid
                else:
                    lon_hi = mid
            else:
                mid = (lat_lo + lat_hi) / 2
                if bit:
                    lat_lo = mid
                else:
                    lat_hi = mid
            even = not even
    return lat_lo, lat_hi, lon_lo, lon_hi


def geohash_decode(code: str) -> Tuple[float, float]:
    """Center of the cell."""
    lat_lo, lat_hi, lon_lo, lon_hi = geohash_bounds(code)
    return (lat_lo + lat_hi) / 2, (lon_lo + lon_hi) / 2


# ---------------------------------------------------------------------------
# time helpers and holidays
# ---------------------------------------------------------------------------

def utc_datetime(timestamp: float) -> _dt.datetime:
    return _dt.datetime.fromtimestamp(float(timestamp), tz=_dt.timezone.utc)


def time_fields(timestamp: float) -> Tuple[int, int, _dt.date]:
    """``(hour_of_day, weekday Mon=0, date)`` of a UTC timestamp."""
    d = utc_datetime(timestamp)
    return d.hour, d.weekday(), d.date()


DateLike = Union[_dt.date, _dt.datetime, str, int, float]


def _as_date(value: DateLike) -> _dt.date:
    if isinstance(value, _dt.datetime):
        return value.date()
    if isinstance(value, _dt.date):
        return value
    if isinstance(value, str):
        return _dt.date.fromisoformat(value.strip())
    return utc_datetime(value).date()


@dataclass(frozen=True)
class HolidayCalendar:
    dates: FrozenSet[_dt.date] = frozenset()

    @classmethod
    def from_dates(cls, dates: Iterable[DateLike]) -> "HolidayCalendar":
        return cls(frozenset(_as_date(d) for d in dates))

    @classmethod
    def load(cls, path) -> "HolidayCalendar":
        """One ISO-8601 date per line; ``#`` starts a comment."""
        dates = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                dates.append(_dt.date.fromisoformat(text))
            except ValueError as exc:
                raise DomainError(f"{path}:{lineno}: bad date {text!r}") from exc
        return cls(frozenset(dates))

    def dump(self, path) -> None:
        lines = ["# holiday calendar, one ISO date per line"] + [d.isoformat() for d in sorted(self.dates)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def __contains__(self, value: DateLike) -> bool:
        return _as_date(value) in self.dates

    def __len__(self) -> int:
        return len(self.dates)


def is_holiday(calendar: HolidayCalendar, date: DateLike) -> int:
    return int(date in calendar)

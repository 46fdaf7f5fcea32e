"""Dataset ingestion, time-based splitting and synthetic data.

Files use the column names of the Ele.me public release: one request per
row, behavior history in ``*_list`` columns. CSV cells hold lists joined by
``;``; JSONL lines carry the same field names with native arrays.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .context import GEOHASH_ALPHABET, HOUR_GROUP_TABLE, HolidayCalendar, time_fields
from .errors import DataError
from .events import BehaviorSequence, Example, RequestContext

log = logging.getLogger(__name__)

DAY = 86400


@dataclass
class DatasetSchema:
    """Column names per role."""

    user: str = "user_id"
    item: str = "item_id"
    category: str = "category_1_id"
    shop: str = "shop_id"
    timestamp: str = "times"
    hour: str = "hours"
    weekday: str = "weekdays"
    geohash: str = "geohash12"
    holiday: str = "is_holiday"
    item_list: str = "item_id_list"
    category_list: str = "category_1_id_list"
    shop_list: str = "shop_id_list"
    timediff_list: str = "timediff_list"
    hour_list: str = "hours_list"
    weekday_list: str = "weekdays_list"
    geohash_list: str = "shop_geohash6_list"
    price_list: str = "price_list"
    labels: Dict[str, str] = field(default_factory=lambda: {"ctr": "label", "ctcvr": "label_ctcvr"})
    delimiter: str = ";"
    weekday_base: int = 0  # 1 if weekdays are stored Mon=1..Sun=7

    def list_columns(self) -> Tuple[str, ...]:
        return (self.item_list, self.category_list, self.shop_list, self.timediff_list,
                self.hour_list, self.weekday_list, self.geohash_list)

    def required(self) -> Tuple[str, ...]:
        return (self.user, self.item, self.category, self.shop, self.timestamp, self.geohash) + self.list_columns()

    def roles(self) -> set:
        named = {v for k, v in asdict(self).items() if isinstance(v, str) and k != "delimiter"}
        return named | set(self.labels.values())


def _split(value, delimiter: str) -> List[str]:
    if isinstance(value, list):
        return value
    if value is None:
        return []
    value = str(value).strip()
    return [] if value == "" else value.split(delimiter)


class DatasetReader:
    """Streaming reader over a ``.csv`` or ``.jsonl`` file.

    Malformed rows are skipped and recorded in :attr:`errors` as
    ``(line_number, message)``; once more than ``max_errors`` rows fail the
    read aborts with :class:`DataError`.
    """

    def __init__(self, path, schema: Optional[DatasetSchema] = None, calendar: Optional[HolidayCalendar] = None,
                 max_errors: int = 100):
        self.path = Path(path)
        self.schema = schema or DatasetSchema()
        self.calendar = calendar
        self.max_errors = max_errors
        self.errors: List[Tuple[int, str]] = []
        if not self.path.exists():
            raise DataError(f"{self.path}: no such file")
        self.format = "jsonl" if self.path.suffix in (".jsonl", ".json") else "csv"

    def _records(self) -> Iterator[Tuple[int, dict]]:
        with open(self.path, encoding="utf-8", newline="") as fh:
            if self.format == "csv":
                reader = csv.DictReader(fh)
                header = reader.fieldnames or []
                missing = [c for c in self.schema.required() if c not in header]
                if missing:
                    raise DataError(f"{self.path}: header lacks required columns {missing}")
                for lineno, row in enumerate(reader, start=2):
                    yield lineno, row
            else:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        row = json.loads(line)
                    except json.JSONDecodeError as exc:
                        yield lineno, {"__error__": f"invalid JSON: {exc}"}
                        continue
                    yield lineno, row

    def __iter__(self) -> Iterator[Example]:
        self.errors = []
        for lineno, row in self._records():
            try:
                if "__error__" in row:
                    raise DataError(row["__error__"])
                yield parse_row(row, self.schema, self.calendar)
            except (DataError, ValueError, KeyError, TypeError) as exc:
                self.errors.append((lineno, str(exc)))
                log.warning("%s:%d: %s", self.path, lineno, exc)
                if len(self.errors) > self.max_errors:
                    raise DataError(f"{self.path}: more than {self.max_errors} malformed rows; "
                                    f"last at line {lineno}: {exc}") from exc


def load_dataset(path, schema: Optional[DatasetSchema] = None, calendar: Optional[HolidayCalendar] = None,
                 max_errors: int = 100) -> DatasetReader:
    return DatasetReader(path, schema, calendar, max_errors)


def parse_row(row: dict, schema: DatasetSchema, calendar: Optional[HolidayCalendar] = None) -> Example:
    s = schema
    lists = {c: _split(row.get(c), s.delimiter) for c in s.list_columns()}
    lengths = {c: len(v) for c, v in lists.items()}
    if len(set(lengths.values())) > 1:
        raise DataError(f"behavior list lengths differ: {lengths}")
    n = lengths[s.item_list]
    prices = _split(row.get(s.price_list), s.delimiter)
    if prices and len(prices) != n:
        raise DataError(f"{s.price_list} has {len(prices)} entries, expected {n}")

    ts = float(row[s.timestamp])
    hour_raw, weekday_raw = row.get(s.hour), row.get(s.weekday)
    d_hour, d_weekday, date = time_fields(ts)
    hour = int(hour_raw) if hour_raw not in (None, "") else d_hour
    weekday = int(weekday_raw) - s.weekday_base if weekday_raw not in (None, "") else d_weekday
    geo = str(row[s.geohash])[:6]
    holiday_raw = row.get(s.holiday)
    if holiday_raw not in (None, ""):
        holiday = int(holiday_raw)
    else:
        holiday = int(calendar is not None and date in calendar)
    request = RequestContext(ts, hour, weekday, geo, holiday,
                             int(row[s.item]), int(row[s.category]), int(row[s.shop]))

    timediffs = np.asarray([float(x) for x in lists[s.timediff_list]])
    seq = BehaviorSequence(
        [int(x) for x in lists[s.item_list]],
        [int(x) for x in lists[s.category_list]],
        [int(x) for x in lists[s.shop_list]],
        ts - timediffs,
        [int(x) for x in lists[s.hour_list]],
        [int(x) - s.weekday_base for x in lists[s.weekday_list]],
        [str(x) for x in lists[s.geohash_list]],
        [float(x) if x not in ("", None) else np.nan for x in prices] if prices else None,
    )
    if n and np.any(np.diff(seq.timestamps) < 0):
        raise DataError("behavior timestamps are not in chronological order")
    if np.any((seq.hours < 0) | (seq.hours > 23)) or np.any((seq.weekdays < 0) | (seq.weekdays > 6)):
        raise DataError("hour or weekday out of range in behavior lists")
    labels = {task: int(float(row[col])) for task, col in s.labels.items() if row.get(col) not in (None, "")}
    extra = {k: v for k, v in row.items() if k not in s.roles()}
    return Example(seq, request, labels, int(row[s.user]), extra)


def example_to_row(ex: Example, schema: Optional[DatasetSchema] = None, as_lists: bool = False) -> dict:
    """Inverse of :func:`parse_row`."""
    s = schema or DatasetSchema()
    seq, req = ex.sequence, ex.request

    def fmt(values):
        values = list(values)
        return values if as_lists else s.delimiter.join(str(v) for v in values)

    def num(x: float):
        return int(x) if float(x).is_integer() else float(x)

    row = {
        s.user: ex.user_id,
        s.item: req.item_id,
        s.category: req.category_id,
        s.shop: req.shop_id,
        s.timestamp: num(req.timestamp),
        s.hour: req.hour_of_day,
        s.weekday: req.weekday + s.weekday_base,
        s.geohash: req.geohash6,
        s.holiday: req.is_holiday,
        s.item_list: fmt(seq.item_ids.tolist()),
        s.category_list: fmt(seq.category_ids.tolist()),
        s.shop_list: fmt(seq.shop_ids.tolist()),
        s.timediff_list: fmt(num(req.timestamp - t) for t in seq.timestamps),
        s.hour_list: fmt(seq.hours.tolist()),
        s.weekday_list: fmt((seq.weekdays + s.weekday_base).tolist()),
        s.geohash_list: fmt(seq.geohashes.tolist()),
    }
    if not np.all(np.isnan(seq.prices)):
        row[s.price_list] = fmt("" if np.isnan(p) else p for p in seq.prices)
    for task, col in s.labels.items():
        if task in ex.labels:
            row[col] = ex.labels[task]
    row.update(ex.features)
    return row


def write_csv(examples: Iterable[Example], path, schema: Optional[DatasetSchema] = None) -> int:
    s = schema or DatasetSchema()
    rows = [example_to_row(ex, s) for ex in examples]
    fields = list(s.required()) + [s.hour, s.weekday, s.holiday, s.price_list] + list(s.labels.values())
    for row in rows:
        fields += [k for k in row if k not in fields]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, restval="")
        writer.writeheader()
        writer.writerows(rows)
    return len(rows)


def write_jsonl(examples: Iterable[Example], path, schema: Optional[DatasetSchema] = None) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_row(ex, schema, as_lists=True), sort_keys=True) + "\n")
            n += 1
    return n


def time_split(examples: Iterable[Example], boundary: float) -> Tuple[List[Example], List[Example]]:
    """Train: requests at or before ``boundary``. Test: requests in ``(boundary, boundary + 1 day]``."""
    train, test = [], []
    for ex in examples:
        ts = ex.request.timestamp
        if ts <= boundary:
            train.append(ex)
        elif ts <= boundary + DAY:
            test.append(ex)
    return train, test


def cold_start_slice(examples: Iterable[Example], max_len: int = 10) -> List[Example]:
    """Requests whose history holds fewer than ``max_len`` behaviors."""
    return [ex for ex in examples if len(ex.sequence) < max_len]


# ---------------------------------------------------------------------------
# synthetic data with planted periodicity
# ---------------------------------------------------------------------------

HOUR_GROUP_HOURS = [np.flatnonzero(HOUR_GROUP_TABLE == g) for g in range(3)]
SYNTH_EPOCH = 1709510400  # 2024-03-04 00:00 UTC, a Monday


@dataclass
class SyntheticSpec:
    """Generator settings.

    Each user has a preferred category and hour group and visits that
    category in that hour group on most days, near a home geohash, on top of
    random background activity. A request is *planted* when its target is the
    preferred category and it falls in the preferred hour group; its click
    label is 1 with probability ``p_signal`` if planted and ``1 - p_signal``
    otherwise, then flipped with probability ``label_noise``.
    """

    n_users: int = 5000
    n_items: int = 2000
    n_categories: int = 20
    n_shops: int = 500
    history_days: int = 30
    train_days: int = 7
    train_requests_per_user: int = 10
    test_requests_per_user: int = 2
    max_len: int = 50
    visit_rate: float = 0.8
    background_rate: float = 1.5
    pref_category_rate: float = 0.5
    pref_hour_rate: float = 0.5
    p_signal: float = 0.9
    label_noise: float = 0.0
    conversion_planted: float = 0.6
    conversion_other: float = 0.2
    cold_start_fraction: float = 0.1
    holiday_rate: float = 0.15
    home_rate: float = 0.8

    def __post_init__(self):
        if not 0.5 < self.p_signal <= 1.0:
            raise ValueError(f"p_signal must lie in (0.5, 1], got {self.p_signal}")
        if not 0.0 <= self.label_noise < 0.5:
            raise ValueError(f"label_noise must lie in [0, 0.5), got {self.label_noise}")
        if self.n_categories < 2 or self.n_items < self.n_categories:
            raise ValueError("need at least 2 categories and one item per category")

    @property
    def boundary(self) -> int:
        """Last training second: end of the final training day."""
        return SYNTH_EPOCH + (self.history_days + self.train_days) * DAY - 1

    def design_positive_rate(self) -> float:
        planted = self.pref_category_rate * self.pref_hour_rate
        rate = planted * self.p_signal + (1 - planted) * (1 - self.p_signal)
        return rate * (1 - self.label_noise) + (1 - rate) * self.label_noise

    @classmethod
    def load(cls, path) -> "SyntheticSpec":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def _random_geohash(rng: np.random.Generator, lead: Optional[str] = None) -> str:
    chars = rng.choice(list(GEOHASH_ALPHABET), size=6)
    if lead is not None:
        chars[0] = lead
    return "".join(chars)


def generate_examples(spec: SyntheticSpec, seed: int = 0) -> Tuple[List[Example], HolidayCalendar]:
    """Deterministic synthetic requests (train days followed by one test day)."""
    rng = np.random.default_rng(seed)
    n_days = spec.history_days + spec.train_days + 1
    first_request_day = spec.history_days
    item_category = 1 + np.arange(spec.n_items) % spec.n_categories  # item id i+1 -> category
    item_shop = rng.integers(1, spec.n_shops + 1, size=spec.n_items)
    items_by_cat = [np.flatnonzero(item_category == c) + 1 for c in range(spec.n_categories + 1)]
    holiday_days = [d for d in range(n_days) if rng.random() < spec.holiday_rate]
    calendar = HolidayCalendar.from_dates([SYNTH_EPOCH + d * DAY for d in holiday_days])

    examples: List[Example] = []
    for user in range(1, spec.n_users + 1):
        pref_cat = int(rng.integers(1, spec.n_categories + 1))
        pref_hg = int(rng.integers(0, 3))
        home = _random_geohash(rng, "w" if rng.random() < 0.5 else None)
        start_day = 0
        if rng.random() < spec.cold_start_fraction:
            start_day = int(rng.integers(first_request_day - 3, n_days))

        ts, cats, geos = [], [], []
        for day in range(start_day, n_days):
            base = SYNTH_EPOCH + day * DAY
            if rng.random() < spec.visit_rate:
                hour = int(rng.choice(HOUR_GROUP_HOURS[pref_hg]))
                ts.append(base + hour * 3600 + int(rng.integers(0, 3600)))
                cats.append(pref_cat)
                geos.append(home)
            for _ in range(rng.poisson(spec.background_rate)):
                ts.append(base + int(rng.integers(0, DAY)))
                cats.append(int(rng.integers(1, spec.n_categories + 1)))
                geos.append(home if rng.random() < 0.3 else _random_geohash(rng))
        order = np.argsort(ts, kind="stable")
        ts_arr = np.asarray(ts, dtype=np.int64)[order]
        cat_arr = np.asarray(cats, dtype=np.int64)[order]
        geo_arr = np.asarray(geos, dtype="<U12")[order] if geos else np.zeros(0, dtype="<U12")
        item_arr = np.array([rng.choice(items_by_cat[c]) for c in cat_arr], dtype=np.int64)
        shop_arr = item_shop[item_arr - 1] if len(item_arr) else np.zeros(0, dtype=np.int64)
        hours = (ts_arr % DAY) // 3600
        weekdays = ((ts_arr - SYNTH_EPOCH) // DAY) % 7
        history = BehaviorSequence(item_arr, cat_arr, shop_arr, ts_arr.astype(np.float64), hours, weekdays, geo_arr)

        request_days = ([int(d) for d in rng.integers(first_request_day, n_days - 1, spec.train_requests_per_user)]
                        + [n_days - 1] * spec.test_requests_per_user)
        for day in sorted(request_days):
            hour_match = rng.random() < spec.pref_hour_rate
            hg = pref_hg if hour_match else int(rng.choice([g for g in range(3) if g != pref_hg]))
            hour = int(rng.choice(HOUR_GROUP_HOURS[hg]))
            t_req = SYNTH_EPOCH + day * DAY + hour * 3600 + int(rng.integers(0, 3600))
            cat_match = rng.random() < spec.pref_category_rate
            cat = pref_cat if cat_match else int(rng.choice([c for c in range(1, spec.n_categories + 1) if c != pref_cat]))
            item = int(rng.choice(items_by_cat[cat]))
            geo = home if rng.random() < spec.home_rate else _random_geohash(rng)
            planted = cat_match and hour_match
            p = spec.p_signal if planted else 1.0 - spec.p_signal
            click = int(rng.random() < p)
            if rng.random() < spec.label_noise:
                click = 1 - click
            convert = int(click and rng.random() < (spec.conversion_planted if planted else spec.conversion_other))
            cut = int(np.searchsorted(ts_arr, t_req, side="left"))
            seq = history.take(np.arange(max(0, cut - spec.max_len), cut))
            request = RequestContext.at(t_req, geo, item, cat, int(item_shop[item - 1]), calendar)
            examples.append(Example(seq, request, {"ctr": click, "ctcvr": convert}, user, {"planted": int(planted)}))
    examples.sort(key=lambda ex: (ex.request.timestamp, ex.user_id))
    return examples, calendar


def generate_synthetic(spec: SyntheticSpec, seed: int, out_dir) -> Dict[str, Path]:
    """Write ``data.csv``, ``data.jsonl``, ``holidays.txt`` and ``meta.json`` to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    examples, calendar = generate_examples(spec, seed)
    paths = {
        "csv": out / "data.csv",
        "jsonl": out / "data.jsonl",
        "holidays": out / "holidays.txt",
        "meta": out / "meta.json",
    }
    write_csv(examples, paths["csv"])
    write_jsonl(examples, paths["jsonl"])
    calendar.dump(paths["holidays"])
    meta = {
        "seed": seed,
        "spec": asdict(spec),
        "split_boundary": spec.boundary,
        "rows": len(examples),
        "n_items": spec.n_items,
        "n_categories": spec.n_categories,
        "n_shops": spec.n_shops,
        "design_positive_rate": spec.design_positive_rate(),
    }
    paths["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def load_data_dir(data_dir, schema: Optional[DatasetSchema] = None) -> Tuple[List[Example], dict, DatasetReader]:
    """Read a directory written by :func:`generate_synthetic` (or laid out the same way).

    Prefers ``data.jsonl`` over ``data.csv``; ``meta.json`` and ``holidays.txt``
    are optional.
    """
    d = Path(data_dir)
    meta_path = d / "meta.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    calendar = HolidayCalendar.load(d / "holidays.txt") if (d / "holidays.txt").exists() else None
    for name in ("data.jsonl", "data.csv"):
        if (d / name).exists():
            reader = load_dataset(d / name, schema, calendar)
            return list(reader), meta, reader
    raise DataError(f"{d}: expected data.jsonl or data.csv")

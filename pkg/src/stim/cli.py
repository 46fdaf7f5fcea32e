"""Command-line entry point: ``stim <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence


from .context import DomainError, HolidayCalendar
from .data_io import (
    SyntheticSpec,
    cold_start_slice,
    generate_examples,
    generate_synthetic,
    load_data_dir,
    time_split,
    DAY,
)
from .errors import ConfigError, DataError
from .events import BehaviorEvent, BehaviorSequence, RequestContext
from .forgetting import dump_trajectory, write_trajectory_csv
from .gsu import gsu_search, pad_sequence
from .harness import EncodingCache, SweepSpec, evaluate, run_ablation_suite, variants_for
from .model import ModelConfig, build_model, encode_examples, fit, load_model

log = logging.getLogger("stim")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _split(examples, meta: dict):
    """Train/test split at the recorded boundary, else before the last day."""
    if not examples:
        raise DataError("dataset is empty")
    boundary = meta.get("split_boundary")
    if boundary is None:
        last = max(ex.request.timestamp for ex in examples)
        boundary = (int(last) // DAY) * DAY - 1
    return time_split(examples, float(boundary))


def _write_rows(rows: Sequence[dict], path: Optional[str]) -> None:
    if not rows:
        return
    cols: List[str] = []
    for r in rows:
        cols += [c for c in r if c not in cols]
    fh = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if path:
            fh.close()


def _load_json(path: str, error=ConfigError):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise error(f"cannot read {path}: {exc}") from exc


def parse_request(raw: dict, calendar: Optional[HolidayCalendar] = None):
    """Request JSON -> ``(history, request)``.

    Expected keys: ``timestamp``, ``geohash6``, optional target ``item_id``,
    ``category_id``, ``shop_id``, ``is_holiday`` and ``history``, a list of
    ``{item_id, category_id, shop_id, timestamp, geohash6}`` objects.
    """
    try:
        history = BehaviorSequence.from_events(
            BehaviorEvent.at(int(e.get("item_id", 0)), int(e.get("category_id", 0)), int(e.get("shop_id", 0)),
                             float(e["timestamp"]), str(e["geohash6"]))
            for e in sorted(raw.get("history", []), key=lambda e: float(e["timestamp"]))
        )
        request = RequestContext.at(float(raw["timestamp"]), str(raw["geohash6"]), int(raw.get("item_id", 0)),
                                    int(raw.get("category_id", 0)), int(raw.get("shop_id", 0)), calendar)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed request: {exc!r}") from exc
    if "is_holiday" in raw:
        request.is_holiday = int(bool(raw["is_holiday"]))
    return history, request


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_synth(args) -> int:
    try:
        spec = SyntheticSpec(**_load_json(args.spec)) if args.spec else SyntheticSpec()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad synthetic spec: {exc}") from exc
    paths = generate_synthetic(spec, args.seed, args.out)
    meta = json.loads(paths["meta"].read_text())
    print(f"wrote {meta['rows']} rows to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = ModelConfig.load(args.config)
    examples, meta, _ = load_data_dir(args.data)
    config = _fit_vocab(config, meta)
    train, test = _split(examples, meta)
    if not train:
        raise DataError("no training rows before the split boundary")
    model = build_model(config)
    result = fit(model, encode_examples(train, config))
    if result.diverged:
        raise DataError(f"training diverged: {result.error}")
    model.save(args.out)
    rows = [evaluate(model, encode_examples(train, config), "train").as_row()]
    if test:
        rows.append(evaluate(model, encode_examples(test, config), "test").as_row())
    _write_rows(rows, None)
    return EXIT_OK


def _fit_vocab(config: ModelConfig, meta: dict) -> ModelConfig:
    """Fill vocabulary sizes from dataset metadata when present."""
    sizes = {k: int(meta[k]) for k in ("n_items", "n_categories", "n_shops") if k in meta}
    return config.replace(**sizes) if sizes else config


def cmd_eval(args) -> int:
    try:
        model = load_model(args.ckpt)
    except ConfigError:
        raise
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load checkpoint {args.ckpt}: {exc}") from exc
    examples, meta, _ = load_data_dir(args.data)
    _, test = _split(examples, meta)
    config = model.config
    rows = [evaluate(model, encode_examples(test, config), "test").as_row()]
    if args.cold_start:
        cold = cold_start_slice(test, args.max_len)
        rows.append(evaluate(model, encode_examples(cold, config), f"cold_start<{args.max_len}").as_row())
    _write_rows(rows, args.out)
    return EXIT_OK


def cmd_mask_dump(args) -> int:
    config = ModelConfig.load(args.config)
    raw = _load_json(args.request, DataError)
    history, request = parse_request(raw)
    if request.category_id:
        seq = gsu_search(history, request, config.k)
    else:
        seq = pad_sequence(history, config.k)
    try:
        rows = dump_trajectory(seq, request, config.material_curves, config.time_mapping, config.geo_rule)
    except DomainError as exc:
        raise DataError(str(exc)) from exc
    write_trajectory_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = ModelConfig.load(args.config)
    sweep = SweepSpec.from_dict(_load_json(args.sweep)) if args.sweep else None
    if args.data:
        examples, meta, _ = load_data_dir(args.data)
    else:
        try:
            spec = SyntheticSpec(**_load_json(args.spec)) if args.spec else SyntheticSpec()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad synthetic spec: {exc}") from exc
        examples, _ = generate_examples(spec, args.data_seed)
        meta = {"split_boundary": spec.boundary, "n_items": spec.n_items,
                "n_categories": spec.n_categories, "n_shops": spec.n_shops}
    config = _fit_vocab(config, meta)
    train, test = _split(examples, meta)
    variants = variants_for(args.family, config, sweep, baseline=args.baseline)
    seeds = [config.seed + i for i in range(args.seeds)]
    table = run_ablation_suite(config, EncodingCache(train, test), variants, seeds)
    table.write_csv(args.out)
    if table.significance:
        table.write_significance_csv(str(Path(args.out).with_suffix("")) + "_ttest.csv")
    print(table.pretty())
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="write a planted-periodicity synthetic dataset")
    g.add_argument("--spec", help="JSON SyntheticSpec overrides")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", help="train a model and save a checkpoint")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test day")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--cold-start", action="store_true", help="also report the short-history slice")
    e.add_argument("--max-len", type=int, default=10)
    e.add_argument("--out", help="CSV path (default: stdout)")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("mask-dump", help="dump raw retention trajectories for one request")
    m.add_argument("--config", required=True)
    m.add_argument("--request", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mask_dump)

    a = sub.add_parser("ablate", help="run an ablation family and write a comparison table")
    a.add_argument("--config", required=True)
    a.add_argument("--family", required=True, choices=["curve", "N", "M", "grid"])
    a.add_argument("--out", required=True)
    a.add_argument("--data", help="data directory (default: generate synthetic data)")
    a.add_argument("--spec", help="SyntheticSpec JSON used when --data is absent")
    a.add_argument("--data-seed", type=int, default=0)
    a.add_argument("--seeds", type=int, default=1, help="number of training seeds")
    a.add_argument("--sweep", help="SweepSpec JSON for --family grid")
    a.add_argument("--baseline", action="store_true", help="add the GSU-only baseline row")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

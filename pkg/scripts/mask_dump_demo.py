"""Raw retention trajectory for a request with three same-hour-group orders.

Writes the CSV through the CLI and draws the hour trajectory as text bars,
newest event at the bottom.

    python3 scripts/mask_dump_demo.py --out trajectory.csv
"""

import argparse
import csv
import json
import tempfile
from pathlib import Path

from stim.cli import main as cli

T0 = 1709510400  # Monday 00:00 UTC
DAY, HOUR = 86400, 3600


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="trajectory.csv")
    ap.add_argument("--k", type=int, default=16)
    args = ap.parse_args()

    hits = {1, 4, 7}
    history = [{"item_id": i + 1, "category_id": 3, "shop_id": 1, "geohash6": "wkbcde",
                "timestamp": T0 + i * DAY + (9 if i in hits else 20) * HOUR} for i in range(8)]
    request = {"timestamp": T0 + 9 * DAY + 8 * HOUR, "geohash6": "u4pruy", "category_id": 3, "history": history}
    with tempfile.TemporaryDirectory() as tmp:
        req, cfg = Path(tmp) / "request.json", Path(tmp) / "config.json"
        req.write_text(json.dumps(request))
        cfg.write_text(json.dumps({"k": args.k}))
        code = cli(["mask-dump", "--config", str(cfg), "--request", str(req), "--out", args.out])
    if code:
        raise SystemExit(code)
    with open(args.out, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["material"] == "hour" and float(r["gap"]) > 0]
    for r in rows:
        value = float(r["retention"])
        mark = "*" if r["review"] == "1" else " "
        print(f"pos {int(r['position']):2d} t={float(r['t']):5.2f} {mark} {value:.3f} " + "#" * int(round(40 * value)))


if __name__ == "__main__":
    main()

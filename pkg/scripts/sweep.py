"""Forgetting-curve hyperparameter sweep (R_init, R_final, S, I) on synthetic data.

    python3 scripts/sweep.py --sweep configs/sweep.json --config configs/stim.json --out sweep.csv
"""

import argparse
import json
import logging

from stim.data_io import SyntheticSpec, generate_examples, time_split
from stim.harness import EncodingCache, SweepSpec, grid_variants, run_ablation_suite
from stim.model import ModelConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default="configs/stim.json")
    ap.add_argument("--sweep", default="configs/sweep.json")
    ap.add_argument("--spec", default="configs/synth_small.json")
    ap.add_argument("--seeds", type=int, default=1)
    ap.add_argument("--out", default="sweep.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    spec = SyntheticSpec.load(args.spec)
    config = ModelConfig.load(args.config).replace(
        n_items=spec.n_items, n_categories=spec.n_categories, n_shops=spec.n_shops)
    sweep = SweepSpec.from_dict(json.loads(open(args.sweep).read()))
    train, test = time_split(generate_examples(spec, 0)[0], spec.boundary)
    variants = grid_variants(config, sweep)
    print(f"{len(variants)} grid points after dropping r_init > r_final")
    table = run_ablation_suite(config, EncodingCache(train, test), variants, range(args.seeds))
    table.write_csv(args.out)
    print(table.pretty())


if __name__ == "__main__":
    main()

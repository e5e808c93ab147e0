"""Stability constants over a contrast sweep on one fixed streak geometry.

    python3 scripts/contrast_table.py [configs/sweep.txt] [--set workers=4]
"""

import argparse
import sys
import time

import numpy as np

from cemsplit.experiments import contrast_sweep, load_config, sweep_csv


def main(argv):
    parser = argparse.ArgumentParser()
    parser.add_argument("config", nargs="?", default="configs/sweep.txt")
    parser.add_argument("--set", action="append", default=[])
    args = parser.parse_args(argv)
    cfg = load_config(args.config, args.set)
    t0 = time.perf_counter()
    rows = contrast_sweep(cfg)
    sys.stdout.write(sweep_csv(rows))
    for key in ("supG_V2_first", "supG_V2_second"):
        v = np.array([r[key] for r in rows])
        print(f"# {key}: spread {(v.max() - v.min()) / v.min():.2e}")
    ratios = [b["supG_V1"] / a["supG_V1"] for a, b in zip(rows, rows[1:])]
    print("# supG_V1 decade ratios: " + ", ".join(f"{r:.3f}" for r in ratios))
    print(f"# {time.perf_counter() - t0:.0f}s, written to {cfg.output_dir}/constants.csv")


if __name__ == "__main__":
    main(sys.argv[1:])

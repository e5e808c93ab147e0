"""Time-dependent examples: fine reference against CEM, implicit enriched and partially explicit runs.

    python3 scripts/run_examples.py configs/point_source.txt configs/box_source.txt
"""

import sys
import time
from pathlib import Path

from cemsplit.experiments import ERROR_COLUMNS, dump_config, error_plots, load_config, run_example


def main(paths):
    for path in paths or ["configs/point_source.txt"]:
        cfg = load_config(path)
        t0 = time.perf_counter()
        res = run_example(cfg)
        (Path(cfg.output_dir) / "config.txt").write_text(dump_config(cfg))
        print(f"{path} ({time.perf_counter() - t0:.0f}s)")
        for choice, s in res.items():
            error_plots(s, Path(cfg.output_dir) / f"errors_{choice}")
            finals = "  ".join(f"{c}={s.final(c):.4e}" for c in ERROR_COLUMNS)
            gain = s.final("err_en_cem") / s.final("err_en_partial")
            print(f"  {choice}: {finals}  cem/partial energy {gain:.3f}")


if __name__ == "__main__":
    main(sys.argv[1:])

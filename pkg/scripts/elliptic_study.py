"""Elliptic projection errors of V1 and V1 + V2, and the coarse-size sweep, for several sources."""

import sys

from cemsplit.experiments import elliptic_projection_study, load_config


def main(argv):
    base = load_config(argv[0] if argv else "configs/elliptic.txt")
    for source in ("constant", "box", "point"):
        cfg = base.with_values(source=source, source_value=1.0 if source != "box" else 1 / base.source_width**2)
        print(f"[{source}]")
        for line in elliptic_projection_study(cfg).lines():
            print("  " + line)


if __name__ == "__main__":
    main(sys.argv[1:])

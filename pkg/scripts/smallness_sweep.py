#!/usr/bin/env python3
"""Map the nonconstancy region: sweep the initial nutrient size and watch the
smallness condition flip.

For u_in = 1 + 0.5 cos(pi x) and gamma(s) = s the condition reads
1.5 * v < |u_in - <u_in>|^2 in the dual norm (~0.012665), so the flip sits
near v = 0.00844.
"""

import math
import sys
from pathlib import Path

from chemofv.cli import main

HERE = Path(__file__).resolve().parent
CONFIG = HERE.parent / "configs" / "sweep.toml"
VALUES = "0.1,0.05,0.02,0.01,0.005,0.002"


def run():
    out = HERE.parent / "configs" / "out" / "sweep" / "smallness_sweep.csv"
    code = main(
        [
            "sweep",
            str(CONFIG),
            "--param",
            "initial.v.value",
            "--values",
            VALUES,
            "--workers",
            "4",
            "--out",
            str(out),
        ]
    )
    if code != 0:
        return code
    print()
    print(f"analytic flip threshold for this density: {0.125 / math.pi**2 / 1.5:.6f}")
    print(out.read_text())
    return 0


if __name__ == "__main__":
    sys.exit(run())

#!/usr/bin/env python3
"""Self-convergence study on S1: refinement orders in space and time, plus the
weak-form residual contraction under dt refinement."""

import json
import sys
from pathlib import Path

from chemofv.cli import main
from chemofv.config import load_config

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "s1.toml"


def run():
    code = main(["verify", str(CONFIG)])
    cfg = load_config(CONFIG)
    report = json.loads((cfg.out_dir / "verify_report.json").read_text())
    print()
    print(f"{'quantity':<12} {'errors (coarse -> fine)':<40} order")
    for name, errs in report["errors"].items():
        err_str = "  ".join(f"{e:.4e}" for e in errs)
        order = report["orders"].get(name)
        tail = f" {order:.3f}" if order is not None else ""
        print(f"{name:<12} {err_str:<40}{tail}")
    return code


if __name__ == "__main__":
    sys.exit(run())

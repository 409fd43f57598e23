#!/usr/bin/env python3
"""Run scenario S1 and print the sampled nutrient mass against its decay
envelope, ready for plotting (two columns per row plus their ratio)."""

import sys
from pathlib import Path

from chemofv.cli import execute_scenario
from chemofv.config import load_config
from chemofv.diagnostics import decay_envelope

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "s1.toml"


def run():
    cfg = load_config(CONFIG)
    result, report, ok = execute_scenario(cfg)
    dec = decay_envelope(result.samples, cfg.u_in, cfg.v_in, cfg.motility)
    print(f"# c1 = {dec.c1:.6f}, M = {dec.M:.6f}, max ratio = {dec.max_ratio:.6f}")
    print("t,v_l1,envelope,ratio")
    for t, v1, env in dec.rows:
        ratio = v1 / env if env > 0 else 0.0
        print(f"{t:.6f},{v1:.10e},{env:.10e},{ratio:.6f}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(run())

#!/usr/bin/env python3
"""Interference phasors at the constructive and destructive points.

Prints the four-term decomposition and the balance condition, and writes the
phasor endpoints as CSV for plotting.
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

from smisim.phasor import (
    CarrierSettings,
    DutResponse,
    ModulationSettings,
    eval_output,
    interference_terms,
    solve_balance,
    solve_operating_point,
)
from smisim.trace import write_columns


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out/phasors"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    a1, alpha1 = 1.0, 0.3
    dut = DutResponse(0.4, 0.3)
    bal = solve_balance(a1, a1, dut.xi)
    print(f"balance: cos(alpha1 - alpha2) = {bal.cos_dalpha:.4f}, |alpha1 - alpha2| = {bal.branches[0]:.4f} rad")

    rows = {"mode": [], "b1": [], "beta1": [], "b2": [], "beta2": [], "x": [], "y": []}
    for mode in ("constructive", "destructive"):
        op = solve_operating_point(a1, alpha1, dut, mode)
        mod, car = op.settings(a1, alpha1)
        pt = interference_terms(mod, car, dut)
        s = eval_output(mod, car, dut)
        print(
            f"{mode:12s} a2={op.a2:.3f} alpha2={op.alpha2:.3f} delta={op.delta:+.3f}  "
            f"b1={pt.b1:.4f} b2={pt.b2:.4f} beta1-beta2={math.remainder(pt.beta1 - pt.beta2, 2 * math.pi):+.4f}  |s|={s.amplitude:.3e}"
        )
        for k, v in zip(rows, (0.0 if mode == "constructive" else 1.0, pt.b1, pt.beta1, pt.b2, pt.beta2, s.x, s.y)):
            rows[k].append(v)

    # the fixed reference settings, delta = 0
    pt = interference_terms(ModulationSettings(1.0, 1.0, 0.3, 2.68), CarrierSettings(delta=0.0), dut)
    print(f"reference settings, delta=0: b1={pt.b1:.4f} b2={pt.b2:.4f}")
    write_columns(args.out / "phasors.csv", ["destructive", "b1", "beta1_rad", "b2", "beta2_rad", "x", "y"], list(rows.values()))


if __name__ == "__main__":
    main()

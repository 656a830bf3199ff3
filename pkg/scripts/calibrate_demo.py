#!/usr/bin/env python3
"""Automated calibration on a simulated instrument with unknown mixer offsets.

Runs ``smisim calibrate`` and prints the step log and the resulting
operating points.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from smisim.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out/calibrate"))
    ap.add_argument("--config", type=Path, default=Path(__file__).parent / "configs" / "calibrate.ini")
    args = ap.parse_args()
    rc = cli(["calibrate", "--config", str(args.config), "--out", str(args.out)])
    if rc:
        raise SystemExit(rc)
    rep = json.loads((args.out / "report.json").read_text())
    for e in rep["log"]:
        print(f"{e['t_s']:8.2f} s  {e['step']:10s} {e['message']}")
    for mode, p in rep["operating_points"].items():
        rej = rep["rejection"].get(mode, {})
        extra = ", ".join(f"{k} {v:.3g}x" for k, v in rej.items() if k.endswith("rejection"))
        print(f"{mode:12s} a2={p['a2'] * 1e3:.2f} mV alpha2={p['alpha2']:.4f} rad delta={p['delta']:.4f} rad  {extra}")


if __name__ == "__main__":
    main()

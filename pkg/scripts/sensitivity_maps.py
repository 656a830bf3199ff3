#!/usr/bin/env python3
"""Common-mode sensitivity maps and line cuts on the resonator.

Runs ``smisim map`` for amplitude and phase perturbations and prints the
rejection ratios of the destructive and constructive points against SSB.
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

from smisim import config
from smisim.cli import main as cli
from smisim.phasor import apply_common_noise
from smisim.resonator import DEVICE as RES, smi_output, smi_settings

A1, ALPHA1, FS = 10e-3, math.radians(330.0), 10e6


def ds(mod, car, eps, theta):
    m2, c2 = apply_common_noise(mod, car, eps, theta)
    return abs(complex(smi_output(RES, m2, c2)) - complex(smi_output(RES, mod, car)))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out/sensitivity"))
    ap.add_argument("--config", type=Path, default=Path(__file__).parent / "configs" / "sensitivity.ini")
    args = ap.parse_args()
    for kind in ("amplitude", "phase"):
        cfg = args.out / f"{kind}.ini"
        cfg.parent.mkdir(parents=True, exist_ok=True)
        cfg.write_text(config.to_ini(config.merge(config.load(args.config), {"map": {"perturbation": kind}})))
        rc = cli(["map", "--config", str(cfg), "--out", str(args.out / kind)])
        if rc:
            raise SystemExit(rc)

    ssb = smi_settings(RES, A1, ALPHA1, "ssb", FS)
    for mode, (eps, theta) in (("destructive", (0.01, 0.0)), ("constructive", (0.0, 0.01))):
        point = smi_settings(RES, A1, ALPHA1, mode, FS)
        print(
            f"{mode:12s} a2={point[0].a2 * 1e3:6.2f} mV alpha2={math.degrees(point[0].alpha2):6.1f} deg  "
            f"dS={ds(*point, eps, theta):.3e} V  SSB dS={ds(*ssb, eps, theta):.3e} V  "
            f"rejection {ds(*ssb, eps, theta) / max(ds(*point, eps, theta), 1e-300):.3g}x"
        )


if __name__ == "__main__":
    main()

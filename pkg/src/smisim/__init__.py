"""Desk-scale simulator of a sideband microwave interferometer (SMI).

Two first-order sidebands of one carrier probe a device: one sits on a
resonance, the other serves as a reference. After down-conversion they
interfere, which lets the readout reject common amplitude or common phase
noise on the shared signal path.
"""

__version__ = "0.1.0"

from smisim.phasor import (
    CarrierSettings,
    DemodOutput,
    DutResponse,
    InterferencePoint,
    ModulationSettings,
    NoSolution,
    apply_common_noise,
    eval_output,
    interference_terms,
    sensitivity_map,
    solve_balance,
    solve_operating_point,
)

__all__ = [
    "CarrierSettings",
    "DemodOutput",
    "DutResponse",
    "InterferencePoint",
    "ModulationSettings",
    "NoSolution",
    "apply_common_noise",
    "eval_output",
    "interference_terms",
    "sensitivity_map",
    "solve_balance",
    "solve_operating_point",
]

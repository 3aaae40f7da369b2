"""Electron-spin-mediated control of two weakly coupled nuclear spins.

Subpackages cover the linear-algebra core, the spin-register model, pulse
sequence compilation, stochastic noise channels, state tomography, the
initialization/readout population algebra, scripted experiments, and a CLI.
"""

from . import core, system, pulses, noise, tomography, readout, experiments

__all__ = [
    "core",
    "system",
    "pulses",
    "noise",
    "tomography",
    "readout",
    "experiments",
]

__version__ = "0.1.0"

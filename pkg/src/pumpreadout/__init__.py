"""Single-electron-pump readout of a double-quantum-dot charge qubit.

The pipeline runs in five stages: solve the planar two-dot eigenproblem,
reduce the Coulomb interaction with the pumped wire electron to channel
potentials, scatter a wavepacket through the resulting coupled-channel
barriers, collect the momentum-resolved measurement operators of one
pump cycle, and iterate measure/feedback cycles until the qubit state
is identified.  ``pumpreadout.cli`` drives the whole chain and writes
CSV tables, figure PNGs, and a checksummed manifest.
"""

__version__ = "0.1.0"

from .config import RunConfig, config_text, load_config, validate_config
from .coupling import ChannelPotential, channel_coupling
from .dotsolver import (ChannelSet, build_qubit_basis, default_dot_grid,
                        measurement_window_ratio, solve_dot_eigenstates)
from .model import DeviceGeometry, PhysicalModel, build_physical_model
from .protocol import (FeedbackPolicy, MeasurementMap, build_feedback_policy,
                       build_povm, polar_decompose, protocol_series,
                       residual_uncertainty, simulate_protocol)
from .scattering import (KrausSet, StepperConfig, WavepacketSpec,
                         extract_kraus, paired_runs, run_pair,
                         transmission_coefficient, transmission_scan)

__all__ = [
    "ChannelPotential", "ChannelSet", "DeviceGeometry", "FeedbackPolicy",
    "KrausSet", "MeasurementMap", "PhysicalModel", "RunConfig",
    "StepperConfig", "WavepacketSpec", "build_feedback_policy",
    "build_physical_model", "build_povm", "build_qubit_basis",
    "channel_coupling", "config_text", "default_dot_grid", "extract_kraus",
    "load_config", "measurement_window_ratio", "paired_runs",
    "polar_decompose", "protocol_series", "residual_uncertainty", "run_pair",
    "simulate_protocol", "solve_dot_eigenstates", "transmission_coefficient",
    "transmission_scan", "validate_config", "__version__",
]

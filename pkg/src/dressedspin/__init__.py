"""Driven NV-centre spin dynamics and dressed-state magnetometry toolkit.

Layers, bottom up:

- ``spincore``     small dense complex linear algebra and exact propagators
- ``nvmodel``      the NV ground-state Hamiltonian and driven-spin formulas
- ``dynamics``     stochastic pulse-sequence engine with an OU dephasing bath
- ``analysis``     least-squares fitters (triplet, sinusoid, decay, line)
- ``experiments``  recipes reproducing the spectroscopy and coherence runs
- ``sensing``      AC-magnetometry enhancement estimates and the phase adder
- ``io`` / ``plots`` / ``cli``  deterministic batch output
"""

__version__ = "0.1.0"

from .nvmodel import (
    DressedLevel,
    DriveField,
    MollowParams,
    NVParams,
    PhysicsError,
    dressed_ladder,
    generalized_rabi,
    mollow_spectrum,
    nv_hamiltonian,
    rabi_frequency,
    rotating_frame,
    side_peak_shifts,
    transition_frequencies,
)
from .dynamics import (
    ElementKind,
    InitMode,
    NoiseModel,
    PulseElement,
    PulseSequence,
    ReadoutModel,
    RunResult,
    ou_trajectory,
    readout,
    run_sequence,
)
from .analysis import FitError, FitResult, fit_exp_decay, fit_line, fit_mollow, fit_sinusoid
from .experiments import (
    DecayCurve,
    Spectrum,
    SweepResult,
    ats_odmr,
    calibrate_noise,
    drive_detuning_sweep,
    drive_power_sweep,
    echo_scan,
    pulsed_odmr,
    rabi_scan,
)
from .sensing import (
    ACField,
    SensingConfig,
    adder_simulate,
    bmin_ratio,
    echo_phase,
    enhancement_ratio,
    protocol_sensitivity,
)

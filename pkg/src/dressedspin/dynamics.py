"""Stochastic time-domain engine for pulsed spin experiments.

The simulation works in a rotating frame, one two-level subspace
(|0,m_I>, |-1,m_I>) per nuclear-spin manifold.  A continuous drive and
any probe pulses enter as transverse fields; a pulse whose frequency
differs from the frame frequency oscillates at the beat between the two.
Dephasing comes from an Ornstein-Uhlenbeck frequency-shift process that
rides on the sigma_z term of every manifold simultaneously.

Per trajectory the evolution is piecewise-exact: each sub-step applies a
closed-form SU(2) rotation with the noise and beat phase frozen at the
step midpoint.  Sub-step lengths follow the fastest frequency present
(50 steps per period) and the noise correlation time.  Elements with no
transverse field at all commute with the noise, so they are integrated
as pure phase accumulation with no step-size error.

Determinism: a run is a pure function of (sequence, parameters, seed).
All random numbers come from one PCG64 generator in a fixed draw order
(initial bath values, per-element random pulse phases, then noise
increments in time order, trajectory-major within each step block).
Phase-cycled acquisitions regenerate the identical noise so that the
difference removes common-mode structure exactly.  Averages use numpy's
pairwise summation; repeated runs are bit-identical.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .nvmodel import (
    DriveField,
    NVParams,
    PhysicsError,
    check_rwa,
    rabi_frequency,
    transition_frequencies,
)

__all__ = [
    "ElementKind",
    "InitMode",
    "NoiseModel",
    "PulseElement",
    "PulseSequence",
    "ReadoutModel",
    "RunResult",
    "laser_init",
    "mw_pulse",
    "wait",
    "readout_marker",
    "ou_trajectory",
    "readout",
    "run_sequence",
]

STEPS_PER_PERIOD = 50       # sub-steps per fastest oscillation period
NOISE_STEP_FRACTION = 20    # sub-steps per noise correlation time
CHUNK_STEPS = 1024          # noise increments generated per block
T_SEQ_TOL = 1e-9


class ElementKind(enum.Enum):
    LASER_INIT = "laser_init"
    MW_PULSE = "mw_pulse"
    WAIT = "wait"
    READOUT = "readout"


class InitMode(enum.Enum):
    POLARIZE_TO_0 = "polarize_to_0"
    POLARIZE_TO_MINUS_1 = "polarize_to_minus_1"


@dataclass(frozen=True)
class NoiseModel:
    """Ornstein-Uhlenbeck dephasing bath.

    tau_c    : correlation time (us)
    sigma_b  : rms frequency deviation (MHz); 0 disables the bath
    seed     : base seed; identical seeds give identical runs
    n_traj   : trajectories averaged per point
    """

    tau_c: float = 10.0
    sigma_b: float = 0.22
    seed: int = 2024
    n_traj: int = 2000

    def __post_init__(self):
        if self.tau_c <= 0:
            raise ValueError("correlation time must be positive")
        if self.sigma_b < 0:
            raise ValueError("rms deviation must be non-negative")
        if self.n_traj < 1:
            raise ValueError("need at least one trajectory")


@dataclass(frozen=True)
class PulseElement:
    """One entry of a pulse sequence.

    ``frequency`` (MHz), ``amplitude`` (Rabi frequency, MHz) and
    ``phase`` (rad) apply to MW pulses only.  ``phase=None`` draws a
    fresh uniform phase per trajectory, modelling a probe that is not
    phase-locked to the sequence clock.  ``continuous_drive_on`` keeps
    the drive field applied during this element.
    """

    kind: ElementKind
    duration: float
    frequency: float = 0.0
    amplitude: float = 0.0
    phase: float | None = 0.0
    continuous_drive_on: bool = False

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("element duration must be non-negative")
        if self.kind is ElementKind.MW_PULSE and self.amplitude < 0:
            raise ValueError("pulse amplitude must be non-negative")


def laser_init(duration: float, drive_on: bool = False) -> PulseElement:
    return PulseElement(ElementKind.LASER_INIT, duration, continuous_drive_on=drive_on)


def mw_pulse(
    duration: float,
    frequency: float,
    amplitude: float,
    phase: float | None = 0.0,
    drive_on: bool = False,
) -> PulseElement:
    return PulseElement(
        ElementKind.MW_PULSE,
        duration,
        frequency=frequency,
        amplitude=amplitude,
        phase=phase,
        continuous_drive_on=drive_on,
    )


def wait(duration: float, drive_on: bool = False) -> PulseElement:
    return PulseElement(ElementKind.WAIT, duration, continuous_drive_on=drive_on)


def readout_marker(drive_on: bool = False) -> PulseElement:
    return PulseElement(ElementKind.READOUT, 0.0, continuous_drive_on=drive_on)


@dataclass(frozen=True)
class PulseSequence:
    """Ordered pulse elements with a fixed total duration.

    ``t_seq`` defaults to the summed element durations and is validated
    against them otherwise, so sweeps that trade pulse length against
    wait length keep the sequence length honest.  ``phase_cycle`` holds
    the two phases (differing by pi) applied to the final MW pulse of
    the two cycled acquisitions.
    """

    elements: tuple[PulseElement, ...]
    t_seq: float | None = None
    phase_cycle: tuple[float, float] | None = None

    def __post_init__(self):
        elements = tuple(self.elements)
        object.__setattr__(self, "elements", elements)
        total = sum(e.duration for e in elements)
        if self.t_seq is None:
            object.__setattr__(self, "t_seq", total)
        elif abs(self.t_seq - total) > T_SEQ_TOL:
            raise ValueError(
                f"t_seq={self.t_seq} does not match summed durations {total}"
            )
        if self.phase_cycle is not None:
            a, b = self.phase_cycle
            if abs(abs(math.remainder(a - b, 2 * math.pi)) - math.pi) > 1e-9:
                raise ValueError("phase-cycle phases must differ by pi")
            if not any(e.kind is ElementKind.MW_PULSE for e in elements):
                raise ValueError("phase cycling needs at least one MW pulse")


@dataclass(frozen=True)
class ReadoutModel:
    """Photoluminescence readout and optical initialization.

    ``contrast`` is the fractional PL drop of |-1> relative to |0>,
    ``baseline`` the bright level.  ``init_mode`` selects which state the
    laser (plus drive, when applicable) prepares; ``init_fidelity`` is
    the population actually reaching that state.
    """

    contrast: float = 0.30
    baseline: float = 1.0
    init_mode: InitMode = InitMode.POLARIZE_TO_0
    init_fidelity: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.contrast <= 1.0:
            raise ValueError("contrast must lie in [0, 1]")
        if self.baseline <= 0:
            raise ValueError("baseline must be positive")
        if not 0.0 <= self.init_fidelity <= 1.0:
            raise ValueError("init fidelity must lie in [0, 1]")


@dataclass(frozen=True)
class RunResult:
    """Trajectory-averaged signal with its Monte Carlo standard error."""

    signal: float
    stderr: float


def readout(population_minus1: float, ro: ReadoutModel) -> float:
    """PL level for a given |-1> population.

    For ``POLARIZE_TO_0`` readout the bright reference is |0>:
    PL = baseline * (1 - contrast * p).  For ``POLARIZE_TO_MINUS_1`` the
    contrast term is sign-inverted (PL referenced to the inverted
    initialization), PL = baseline * (1 - contrast * (1 - p)).
    """
    p = population_minus1
    if isinstance(p, (int, float)) and not 0.0 <= p <= 1.0:
        raise ValueError("population must lie in [0, 1]")
    if ro.init_mode is InitMode.POLARIZE_TO_MINUS_1:
        return ro.baseline * (1.0 - ro.contrast * (1.0 - p))
    return ro.baseline * (1.0 - ro.contrast * p)


def ou_trajectory(nm: NoiseModel, dt: float, t_total: float, traj_index: int) -> np.ndarray:
    """One Ornstein-Uhlenbeck sample path, MHz, sampled every ``dt``.

    Returns ``round(t_total/dt) + 1`` samples starting from a stationary
    initial value.  Uses the exact one-step update

        x[k+1] = x[k] exp(-dt/tau_c) + sigma_b sqrt(1 - exp(-2 dt/tau_c)) xi

    so the discretization is distribution-exact at the sample times for
    any ``dt``.  The stream is a pure function of (seed, traj_index).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_total < dt:
        raise ValueError("t_total must be at least dt")
    n = int(round(t_total / dt))
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([nm.seed, traj_index])))
    if nm.sigma_b == 0.0:
        return np.zeros(n + 1)
    a = math.exp(-dt / nm.tau_c)
    b = nm.sigma_b * math.sqrt(1.0 - a * a)
    xi = gen.standard_normal(n + 1)
    x = np.empty(n + 1)
    x[0] = nm.sigma_b * xi[0]
    for k in range(n):
        x[k + 1] = x[k] * a + b * xi[k + 1]
    return x


# ---------------------------------------------------------------------------
# Engine internals


@dataclass
class _Channel:
    delta: float      # manifold detuning from the frame frequency (MHz)
    weight: float
    ket: np.ndarray   # initial 2-vector in the (|0>, |-1>) basis

KET0 = np.array([1.0, 0.0], dtype=complex)
KET1 = np.array([0.0, 1.0], dtype=complex)


def _build_channels(p, drive, ro, frame):
    """Initialization channels: one per (manifold, init branch)."""
    freqs = transition_frequencies(p, branch=-1)
    weights_mi = np.full(3, 1.0 / 3.0)
    if ro.init_mode is InitMode.POLARIZE_TO_MINUS_1:
        if drive is not None:
            driven = int(np.argmin(np.abs(freqs - drive.omega)))
            inverted = [driven]
        else:
            inverted = [0, 1, 2]
    else:
        inverted = []
    channels = []
    fid = ro.init_fidelity
    for i in range(3):
        if i in inverted:
            branches = [(fid, KET1), (1.0 - fid, KET0)]
        else:
            branches = [(fid, KET0), (1.0 - fid, KET1)] if ro.init_mode is InitMode.POLARIZE_TO_0 else [(1.0, KET0)]
        for w, ket in branches:
            if w > 0.0:
                channels.append(_Channel(freqs[i] - frame, weights_mi[i] * w, ket))
    return channels


def _frame_frequency(drive, seq):
    if drive is not None and any(e.continuous_drive_on for e in seq.elements):
        return drive.omega
    for e in seq.elements:
        if e.kind is ElementKind.MW_PULSE and e.amplitude > 0:
            return e.frequency
    return 0.0


def _element_dt(elem, terms, nm, duration):
    """Sub-step length for one element."""
    if duration <= 0:
        return duration, 0
    caps = [duration]
    if terms:
        f_dyn = sum(amp for amp, _, _ in terms) * 2.0  # amp entries are Omega/2
        f_dyn += max((abs(beat) for _, beat, _ in terms), default=0.0)
        f_dyn += 4.0 * nm.sigma_b
        f_dyn = max(f_dyn, 0.02)
        caps.append(1.0 / (STEPS_PER_PERIOD * f_dyn))
        if nm.sigma_b > 0:
            caps.append(nm.tau_c / NOISE_STEP_FRACTION)
    else:
        if nm.sigma_b > 0:
            caps.append(nm.tau_c / NOISE_STEP_FRACTION)
            caps.append(duration / 4)
    dt = min(caps)
    n = max(int(math.ceil(duration / dt - 1e-12)), 1)
    return duration / n, n


def _transverse_terms(elem, drive, rabi_d, frame, phasors):
    """List of (amplitude/2, beat frequency, phase factor) for an element.

    The phase factor is either a complex scalar or an (n_traj,) complex
    array for randomized-phase pulses.
    """
    terms = []
    if elem.continuous_drive_on and drive is not None and rabi_d > 0:
        terms.append((0.5 * rabi_d, drive.omega - frame, np.exp(1j * drive.phase)))
    if elem.kind is ElementKind.MW_PULSE and elem.amplitude > 0:
        ph = phasors if elem.phase is None else np.exp(1j * elem.phase)
        terms.append((0.5 * elem.amplitude, elem.frequency - frame, ph))
    return terms


class _OUBath:
    """Vectorized OU update shared by every manifold of a trajectory set."""

    def __init__(self, nm, gen, n_traj):
        self.sigma = nm.sigma_b
        self.tau_c = nm.tau_c
        self.gen = gen
        self.x = (
            self.sigma * gen.standard_normal(n_traj)
            if self.sigma > 0
            else np.zeros(n_traj)
        )
        self._chunk = None
        self._idx = 0
        self._a = None
        self._b = None
        self._dt = None

    def prepare(self, dt):
        if self.sigma == 0.0:
            return
        if dt != self._dt:
            self._a = math.exp(-dt / self.tau_c)
            self._b = self.sigma * math.sqrt(1.0 - self._a * self._a)
            self._dt = dt
        self._chunk = None
        self._idx = 0

    def step(self):
        """Advance every trajectory by the prepared dt."""
        if self.sigma == 0.0:
            return self.x
        if self._chunk is None or self._idx >= self._chunk.shape[0]:
            self._chunk = self.gen.standard_normal((CHUNK_STEPS, self.x.size))
            self._idx = 0
        self.x = self.x * self._a + self._b * self._chunk[self._idx]
        self._idx += 1
        return self.x


def _evolve(psi, channels, elem_list, drive, rabi_d, frame, nm, gen, phasor_map):
    """Run the element list once; returns |-1> populations at readout.

    ``psi`` has shape (n_chan, n_traj, 2) and is mutated in place.
    """
    n_chan, n_traj, _ = psi.shape
    deltas = np.array([c.delta for c in channels])[:, None]
    bath = _OUBath(nm, gen, n_traj)
    t_global = 0.0
    pops = None
    for idx, elem in enumerate(elem_list):
        if elem.kind is ElementKind.READOUT and pops is None:
            weights = np.array([c.weight for c in channels])[:, None]
            pops = np.sum(weights * np.abs(psi[:, :, 1]) ** 2, axis=0)
            break
        if elem.kind is ElementKind.LASER_INIT:
            for c, ch in enumerate(channels):
                psi[c, :, 0] = ch.ket[0]
                psi[c, :, 1] = ch.ket[1]
        if elem.duration <= 0:
            continue
        terms = _transverse_terms(elem, drive, rabi_d, frame, phasor_map.get(idx))
        dt, n_steps = _element_dt(elem, terms, nm, elem.duration)
        if not terms:
            _dephase(psi, deltas, bath, dt, n_steps)
        else:
            _step_su2(psi, deltas, bath, terms, dt, n_steps, t_global)
        t_global += elem.duration
    if pops is None:
        weights = np.array([c.weight for c in channels])[:, None]
        pops = np.sum(weights * np.abs(psi[:, :, 1]) ** 2, axis=0)
    return pops


def _dephase(psi, deltas, bath, dt, n_steps):
    """Exact evolution for elements with no transverse field.

    sigma_z terms commute at all times, so only the integrated frequency
    shift matters.
    """
    duration = dt * n_steps
    if bath.sigma > 0.0:
        bath.prepare(dt)
        acc = np.zeros(bath.x.size)
        for _ in range(n_steps):
            acc += bath.x
            bath.step()
        shift = acc * dt
    else:
        shift = 0.0
    # bz = -(delta + x)/2 per channel; |0> gains e^{-i 2 pi bz t}
    phase0 = np.exp(1j * np.pi * (deltas * duration + shift))
    psi[:, :, 0] *= phase0
    psi[:, :, 1] *= np.conj(phase0)


def _step_su2(psi, deltas, bath, terms, dt, n_steps, t_start):
    """General stepping with transverse fields, midpoint beat phase."""
    bath.prepare(dt)
    psi0 = psi[:, :, 0]
    psi1 = psi[:, :, 1]
    # Precompute scalar beat phasors for every step and term.
    t_mid = t_start + (np.arange(n_steps) + 0.5) * dt
    term_phasors = []
    for amp, beat, ph in terms:
        base = amp * np.exp(2j * np.pi * beat * t_mid)
        term_phasors.append((base, ph))
    two_pi_dt = 2.0 * dt
    for j in range(n_steps):
        bp = None
        for base, ph in term_phasors:
            contrib = base[j] * ph
            bp = contrib if bp is None else bp + contrib
        x = bath.x
        bz = -0.5 * (deltas + x)
        b2 = bp.real * bp.real + bp.imag * bp.imag
        r = np.sqrt(bz * bz + b2)
        c = np.cos(np.pi * two_pi_dt * r)
        s = np.pi * two_pi_dt * np.sinc(two_pi_dt * r)
        sbz = s * bz
        sperp = s * np.conj(bp)
        new0 = (c - 1j * sbz) * psi0 - 1j * sperp * psi1
        psi1 *= c + 1j * sbz
        psi1 += -1j * np.conj(sperp) * psi0
        psi0[...] = new0
        bath.step()


def run_sequence(
    p: NVParams,
    drive: DriveField | None,
    seq: PulseSequence,
    nm: NoiseModel,
    ro: ReadoutModel,
) -> RunResult:
    """Simulate one pulse sequence and return the averaged PL signal.

    Without phase cycling the signal is the fractional PL change
    (PL - PL_ref)/PL_ref against the initialized state.  With
    ``seq.phase_cycle`` set, the sequence runs twice with the final MW
    pulse phase toggled and the result is the normalized difference
    (PL+ - PL-)/(PL+ + PL-), which cancels common-mode fluctuations.

    The same bath realization is used for both cycled acquisitions,
    modelling interleaved acquisition of slow noise.
    """
    if nm.n_traj < 1:
        raise PhysicsError("trajectory count must be at least 1")
    rabi_d = 0.0
    if drive is not None:
        rabi_d = rabi_frequency(p, drive.b_drive)
        if any(e.continuous_drive_on for e in seq.elements):
            check_rwa(p, drive.omega, rabi_d)
    for e in seq.elements:
        if e.kind is ElementKind.MW_PULSE and e.amplitude > 0:
            check_rwa(p, e.frequency, e.amplitude)
    if any(e.continuous_drive_on for e in seq.elements) and drive is None:
        raise PhysicsError("sequence requests the drive but none was given")

    frame = _frame_frequency(drive, seq)
    channels = _build_channels(p, drive, ro, frame)

    if seq.phase_cycle is None:
        pops = _run_once(p, drive, rabi_d, frame, channels, seq.elements, nm)
        pl = _pl_from_pops(pops, ro)
        ref = _reference_pl(channels, ro)
        rel = (pl - ref) / ref
        return RunResult(float(np.mean(rel)), _stderr(rel))

    plus, minus = seq.phase_cycle
    pl_cycle = []
    for phase in (plus, minus):
        elems = _with_final_phase(seq.elements, phase)
        pops = _run_once(p, drive, rabi_d, frame, channels, elems, nm)
        pl_cycle.append(_pl_from_pops(pops, ro))
    a, b = pl_cycle
    num = a - b
    den = a + b
    signal = float(np.sum(num) / np.sum(den))
    # delta-method error for the ratio of correlated means
    resid = num - signal * den
    n = num.size
    stderr = 0.0
    if n > 1:
        stderr = float(np.std(resid, ddof=1) / (np.sqrt(n) * np.mean(den)))
    return RunResult(signal, stderr)


def _run_once(p, drive, rabi_d, frame, channels, elements, nm):
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(nm.seed)))
    n_chan = len(channels)
    psi = np.zeros((n_chan, nm.n_traj, 2), dtype=complex)
    for c, ch in enumerate(channels):
        psi[c, :, 0] = ch.ket[0]
        psi[c, :, 1] = ch.ket[1]
    phasor_map = {}
    for idx, e in enumerate(elements):
        if e.kind is ElementKind.MW_PULSE and e.amplitude > 0 and e.phase is None:
            phasor_map[idx] = np.exp(2j * np.pi * gen.random(nm.n_traj))
    return _evolve(psi, channels, elements, drive, rabi_d, frame, nm, gen, phasor_map)


def _with_final_phase(elements, phase):
    idx = max(
        i for i, e in enumerate(elements) if e.kind is ElementKind.MW_PULSE
    )
    elems = list(elements)
    elems[idx] = replace(elems[idx], phase=phase)
    return tuple(elems)


def _pl_from_pops(pops, ro):
    return ro.baseline * (1.0 - ro.contrast * pops)


def _reference_pl(channels, ro):
    pop_init = sum(c.weight * abs(c.ket[1]) ** 2 for c in channels)
    return ro.baseline * (1.0 - ro.contrast * pop_init)


def _stderr(values):
    n = values.size
    if n < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(n))

"""Prebuilt experiment recipes on the driven NV centre.

Each recipe assembles a pulse sequence family, runs the stochastic
engine over a grid with deterministic per-point seeds, and packages the
results with the fits that the corresponding measurement would quote:

- ``pulsed_odmr``        hyperfine-resolved dips under a weak pi probe
- ``ats_odmr``           probe spectrum under a continuous drive (the
                         drive-split triplet, inverted by the
                         drive-assisted initialization)
- ``drive_power_sweep``  triplet positions versus drive amplitude
- ``drive_detuning_sweep`` triplet positions versus drive frequency
- ``rabi_scan``          probe Rabi oscillations, dressed or undressed
- ``echo_scan``          phase-cycled echo decay, dressed or undressed
- ``calibrate_noise``    bisection of the bath amplitude to a target
                         undressed echo time

Protocol conventions established here (and relied on by the tests):

* Spectra under a continuous drive hold the sequence length at an
  integer number of generalized-Rabi periods so the drive rotation at
  the readout instant is consistent across the scan.
* Coherence protocols address the m_I = +1 manifold (the lowest
  hyperfine line).  Dressed pulses sit on the lower side resonance,
  away from the other hyperfine lines; dressed tau grids are integer
  drive periods and undressed tau grids integer hyperfine periods so
  that off-manifold phases do not alias across the grid.
* The echo readout is captured right after the final pulse, with the
  sequence-length balancing dead time after it; a long pre-readout
  interval would let the readout coherence decay and contaminate the
  tau dependence.
* Each grid point uses an independent, deterministic seed derived from
  (seed, point index).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import savgol_filter

from . import analysis
from .analysis import FitError, FitResult, fit_exp_decay, fit_line, fit_lorentzian, fit_mollow, fit_sinusoid
from .dynamics import (
    InitMode,
    NoiseModel,
    PulseSequence,
    ReadoutModel,
    laser_init,
    mw_pulse,
    readout_marker,
    run_sequence,
    wait,
)
from .nvmodel import (
    DriveField,
    NVParams,
    PhysicsError,
    generalized_rabi,
    rabi_frequency,
    transition_frequencies,
)

__all__ = [
    "Spectrum",
    "DecayCurve",
    "SweepResult",
    "OdmrResult",
    "RabiResult",
    "EchoResult",
    "CalibrationResult",
    "DEFAULT_NOISE",
    "DMW_FREQUENCIES",
    "pulsed_odmr",
    "ats_odmr",
    "drive_power_sweep",
    "drive_detuning_sweep",
    "rabi_scan",
    "echo_scan",
    "calibrate_noise",
    "find_spectrum_peaks",
    "power_sweep_lines",
    "detuning_sweep_fit",
]

log = logging.getLogger(__name__)

# Laser and probe timing of the spectroscopy sequence.
LASER_US = 1.0
PROBE_US = 5.5
PROBE_RABI = 1.0 / (2.0 * PROBE_US)      # pi pulse over the probe duration

# Coherence-protocol amplitudes.
ECHO_PROBE_RABI = 0.43
ECHO_DRIVE_RABI = 1.2

# Drive frequencies for the three-fan power sweep.
DMW_FREQUENCIES = (2834.75, 2837.05, 2839.18)

# Bath amplitude calibrated with calibrate_noise() so the undressed echo
# time constant lands on 4.2 us at tau_c = 10 us; see demos/03.
DEFAULT_SIGMA_B = 0.0847
DEFAULT_NOISE = NoiseModel(tau_c=10.0, sigma_b=DEFAULT_SIGMA_B, seed=2024, n_traj=2000)

ATS_INIT_FIDELITY = 0.8


# ---------------------------------------------------------------------------
# Result records


@dataclass(frozen=True)
class Spectrum:
    """Sampled spectrum: probe frequency (MHz), fractional PL change."""

    x: np.ndarray
    y: np.ndarray
    y_err: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        e = np.asarray(self.y_err, dtype=float)
        if not (x.size == y.size == e.size):
            raise ValueError("spectrum arrays must have equal length")
        if np.any(np.diff(x) <= 0):
            raise ValueError("frequency axis must be strictly increasing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "y_err", e)


@dataclass(frozen=True)
class DecayCurve:
    """Sampled time trace: time (us), signal, standard error."""

    t: np.ndarray
    y: np.ndarray
    y_err: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        y = np.asarray(self.y, dtype=float)
        e = np.asarray(self.y_err, dtype=float)
        if not (t.size == y.size == e.size):
            raise ValueError("curve arrays must have equal length")
        if np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise ValueError("time axis must be non-negative and strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "y_err", e)


@dataclass(frozen=True)
class SweepResult:
    """Fitted peak positions for each value of a control variable.

    ``peak_positions[i]`` holds 1 or 3 sorted positions (MHz) for
    control value ``control[i]``; unresolved structure is reported as a
    single peak.
    """

    control: np.ndarray
    peak_positions: list[np.ndarray]
    peak_errors: list[np.ndarray]
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.peak_positions) != len(self.control):
            raise ValueError("one peak record per control value required")
        for pos in self.peak_positions:
            if len(pos) not in (1, 3):
                raise ValueError("peak count must be 1 or 3")


@dataclass(frozen=True)
class OdmrResult:
    spectrum: Spectrum
    peaks: np.ndarray          # refined positions, MHz
    peak_errors: np.ndarray
    empty: bool                # no feature found in the scan window


@dataclass(frozen=True)
class RabiResult:
    curve: DecayCurve
    fit: FitResult

    @property
    def frequency(self) -> float:
        return self.fit["frequency"]


@dataclass(frozen=True)
class EchoResult:
    curve: DecayCurve
    fit: FitResult

    @property
    def t2(self) -> float:
        return self.fit["t_decay"]


@dataclass(frozen=True)
class CalibrationResult:
    sigma_b: float
    achieved_t2: float
    target_t2: float
    iterations: int
    history: list[tuple[float, float]]   # (sigma_b, fitted T2)


# ---------------------------------------------------------------------------
# Helpers


def _point_seed(seed: int, index: int) -> int:
    """Stable per-grid-point seed."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _point_noise(nm: NoiseModel, index: int, n_traj: int | None = None) -> NoiseModel:
    return NoiseModel(
        tau_c=nm.tau_c,
        sigma_b=nm.sigma_b,
        seed=_point_seed(nm.seed, index),
        n_traj=nm.n_traj if n_traj is None else n_traj,
    )


def _snap_up(value: float, period: float) -> float:
    """Smallest integer multiple of ``period`` that is >= value."""
    return math.ceil(value / period - 1e-9) * period


def _snap_grid(values, period: float) -> np.ndarray:
    """Round values to integer multiples of ``period``, deduplicated."""
    k = np.unique(np.maximum(np.round(np.asarray(values, float) / period), 1).astype(int))
    return k * period


def undressed_tau_grid(t2_scale: float, p: NVParams, n_points: int = 12) -> np.ndarray:
    """Per-arm tau grid spanning [0.3, 1.6] x the expected echo time.

    Snapped to the hyperfine period so that off-manifold probe responses
    do not alias across the grid.  Both echo_scan defaults and
    calibrate_noise use this constructor, keeping the fitted time
    constant's window convention identical in the calibration loop and
    in later scans.
    """
    period = 1.0 / p.a_hf if p.a_hf > 0 else 0.5
    return _snap_grid(np.linspace(0.3 * t2_scale, 1.6 * t2_scale, n_points), period)


# ---------------------------------------------------------------------------
# Spectra


def _odmr_spectrum(p, drive, scan, nm, ro, probe_rabi, probe_us):
    """Run the pulsed-probe sequence over the scan grid."""
    ys = np.empty(scan.size)
    es = np.empty(scan.size)
    if drive is not None:
        rabi_gen = generalized_rabi(
            rabi_frequency(p, drive.b_drive),
            float(np.min(np.abs(transition_frequencies(p) - drive.omega))),
        )
        period = 1.0 / rabi_gen if rabi_gen > 0 else None
    else:
        period = None
    base = LASER_US + probe_us + 0.3
    pad = (_snap_up(base, period) - base + period) if period else 0.2
    drive_on = drive is not None
    for i, nu in enumerate(scan):
        seq = PulseSequence((
            laser_init(LASER_US, drive_on=drive_on),
            mw_pulse(probe_us, float(nu), probe_rabi, phase=None, drive_on=drive_on),
            wait(pad, drive_on=drive_on),
            readout_marker(drive_on=drive_on),
        ))
        r = run_sequence(p, drive, seq, _point_noise(nm, i), ro)
        ys[i] = r.signal
        es[i] = r.stderr
    return Spectrum(np.asarray(scan, float), ys, es)


def pulsed_odmr(
    p: NVParams = NVParams(),
    scan: np.ndarray | None = None,
    nm: NoiseModel = DEFAULT_NOISE,
    ro: ReadoutModel = ReadoutModel(),
    probe_rabi: float = PROBE_RABI,
    probe_us: float = PROBE_US,
) -> OdmrResult:
    """Pulsed ODMR: laser init, weak pi probe, PL readout, frequency scan.

    Defaults scan all three hyperfine dips of the |0> -> |-1> branch.
    The linewidth is the Fourier width of the probe pulse convolved with
    the bath's quasi-static broadening.
    """
    if scan is None:
        freqs = transition_frequencies(p)
        scan = np.arange(freqs.min() - 1.6, freqs.max() + 1.6 + 1e-9, 0.05)
    spectrum = _odmr_spectrum(p, None, np.asarray(scan, float), nm, ro, probe_rabi, probe_us)
    peaks, errs = find_spectrum_peaks(spectrum, sign=-1, max_peaks=3)
    if peaks.size == 0:
        log.warning("pulsed ODMR scan found no features in [%g, %g] MHz", scan[0], scan[-1])
    return OdmrResult(spectrum, peaks, errs, empty=peaks.size == 0)


def ats_odmr(
    p: NVParams = NVParams(),
    drive: DriveField = DriveField(omega=2837.05, b_drive=33.0),
    scan: np.ndarray | None = None,
    nm: NoiseModel = DEFAULT_NOISE,
    ro: ReadoutModel | None = None,
    probe_rabi: float = PROBE_RABI,
    probe_us: float = PROBE_US,
) -> OdmrResult:
    """Probe spectrum under a continuous drive near one hyperfine line.

    The laser and the drive overlap during initialization, which pumps
    the driven manifold into |-1>; the split triplet therefore appears
    with positive (inverted) contrast.  The scan window defaults to the
    triplet region around the drive frequency.
    """
    if ro is None:
        ro = ReadoutModel(init_mode=InitMode.POLARIZE_TO_MINUS_1, init_fidelity=ATS_INIT_FIDELITY)
    rabi = rabi_frequency(p, drive.b_drive)
    if scan is None:
        half = max(1.8, rabi + 1.2)
        scan = np.arange(drive.omega - half, drive.omega + half + 1e-9, 0.05)
    spectrum = _odmr_spectrum(p, drive, np.asarray(scan, float), nm, ro, probe_rabi, probe_us)
    expected = np.array([drive.omega - rabi, drive.omega, drive.omega + rabi])
    peaks, errs = find_spectrum_peaks(spectrum, sign=+1, max_peaks=3, expected=expected)
    return OdmrResult(spectrum, peaks, errs, empty=peaks.size == 0)


# ---------------------------------------------------------------------------
# Peak finding


def find_spectrum_peaks(
    spectrum: Spectrum,
    sign: int = +1,
    max_peaks: int = 3,
    expected: np.ndarray | None = None,
    window_mhz: float = 0.45,
    min_snr: float = 4.0,
):
    """Locate spectral features and refine each with a Lorentzian fit.

    The spectrum is smoothed with a 5-sample quadratic (Savitzky-Golay)
    filter, local extrema of the requested ``sign`` are kept when they
    stand ``min_snr`` standard errors above the local background, and
    each survivor is refined by a Lorentzian fit in a +-``window_mhz``
    window.  When ``expected`` positions are given the search is
    restricted to their neighbourhoods; at most ``max_peaks`` of the
    most prominent features are returned, sorted by position.
    """
    x, y = spectrum.x, spectrum.y * sign
    if x.size < 7:
        raise FitError("spectrum too short for peak finding")
    ys = savgol_filter(y, 5, 2)
    noise = float(np.median(spectrum.y_err)) if np.any(spectrum.y_err > 0) else 0.0
    if noise == 0.0:
        noise = float(np.median(np.abs(y - ys))) / 0.6745 + 1e-12

    idx = [
        i
        for i in range(2, x.size - 2)
        if ys[i] >= ys[i - 1] and ys[i] >= ys[i + 1] and ys[i] > ys[i - 2] and ys[i] > ys[i + 2]
    ]
    if expected is not None:
        idx = [i for i in idx if np.min(np.abs(expected - x[i])) <= window_mhz]
    # prominence against the local background
    cands = []
    half_w = max(int(round(window_mhz / max(x[1] - x[0], 1e-9))), 3)
    for i in idx:
        lo, hi = max(i - 3 * half_w, 0), min(i + 3 * half_w + 1, x.size)
        background = np.percentile(ys[lo:hi], 20)
        prom = ys[i] - background
        if prom > min_snr * noise:
            cands.append((prom, i))
    cands.sort(reverse=True)
    kept = []
    for prom, i in cands:
        if all(abs(x[i] - x[j]) > window_mhz for _, j in kept):
            kept.append((prom, i))
        if len(kept) == max_peaks:
            break

    positions, errors = [], []
    for _, i in kept:
        lo, hi = max(i - half_w, 0), min(i + half_w + 1, x.size)
        try:
            fit = fit_lorentzian(
                x[lo:hi], spectrum.y[lo:hi] * sign, spectrum.y_err[lo:hi], centre0=x[i]
            )
        except FitError:
            continue
        centre = fit["centre"]
        if x[lo] - 0.1 <= centre <= x[hi - 1] + 0.1:
            positions.append(centre)
            errors.append(fit.sigma("centre"))
    order = np.argsort(positions)
    return np.asarray(positions, float)[order], np.asarray(errors, float)[order]


# ---------------------------------------------------------------------------
# Sweeps


def drive_power_sweep(
    p: NVParams = NVParams(),
    drive_freqs=DMW_FREQUENCIES,
    b_grid=(10.0, 20.0, 30.0, 40.0, 50.0, 60.0),
    nm: NoiseModel = DEFAULT_NOISE,
    scan_step: float = 0.05,
) -> list[SweepResult]:
    """Triplet positions versus drive amplitude, one fan per drive frequency.

    Below the splitting threshold the tracker reports a single peak;
    resolved points carry three.  Use :func:`power_sweep_lines` for the
    per-branch linear fits.
    """
    results = []
    for k, f_d in enumerate(drive_freqs):
        control, pos, err = [], [], []
        for i, b in enumerate(b_grid):
            drive = DriveField(omega=float(f_d), b_drive=float(b))
            rabi = rabi_frequency(p, b)
            half = rabi + 1.3
            scan = np.arange(f_d - half, f_d + half + 1e-9, scan_step)
            out = ats_odmr(p, drive, scan, _point_noise(nm, 101 * k + i))
            peaks, errs = _coerce_triplet(out.peaks, out.peak_errors)
            control.append(b)
            pos.append(peaks)
            err.append(errs)
        results.append(
            SweepResult(
                np.asarray(control, float), pos, err,
                label=f"drive at {f_d} MHz",
                meta={"drive_freq": float(f_d)},
            )
        )
    return results


def _coerce_triplet(peaks, errs):
    """Reduce a peak list to the 1-or-3 convention of SweepResult."""
    if peaks.size >= 3:
        # centre-most and the two extremes of the top three by position
        return peaks[:3] if peaks.size == 3 else peaks[[0, peaks.size // 2, -1]], (
            errs[:3] if errs.size == 3 else errs[[0, errs.size // 2, -1]]
        )
    if peaks.size == 0:
        return np.array([np.nan]), np.array([np.nan])
    mid = peaks.size // 2
    return peaks[mid : mid + 1], errs[mid : mid + 1]


def power_sweep_lines(result: SweepResult, y_ref: float | None = None) -> dict[str, FitResult]:
    """Weighted linear fits of the three branches of one power fan.

    Returns fits keyed ``low``, ``centre``, ``high``; positions enter as
    offsets from ``y_ref`` (defaults to the drive frequency recorded in
    the sweep).  Branch fits use only the control values where the
    triplet was resolved.
    """
    ref = result.meta.get("drive_freq", 0.0) if y_ref is None else y_ref
    b_mt = result.control * 1e-3     # uT -> mT, so slopes come out in MHz/mT
    rows = {"low": [], "centre": [], "high": []}
    for b, pos, err in zip(b_mt, result.peak_positions, result.peak_errors):
        if len(pos) == 3:
            for name, j in (("low", 0), ("centre", 1), ("high", 2)):
                rows[name].append((b, pos[j] - ref, max(err[j], 1e-4)))
        elif len(pos) == 1 and np.isfinite(pos[0]):
            rows["centre"].append((b, pos[0] - ref, max(err[0], 1e-4)))
    fits = {}
    for name, data in rows.items():
        if len(data) >= 3:
            arr = np.asarray(data)
            fits[name] = fit_line(arr[:, 0], arr[:, 1], arr[:, 2])
    return fits


def drive_detuning_sweep(
    p: NVParams = NVParams(),
    b_drive: float = 33.0,
    detunings=None,
    centre: float | None = None,
    nm: NoiseModel = DEFAULT_NOISE,
    scan_step: float = 0.05,
) -> SweepResult:
    """Triplet positions versus drive frequency at fixed drive amplitude.

    ``detunings`` are offsets of the drive from ``centre`` (defaults to
    the middle hyperfine line, stepped by 0.2 MHz over +-2 MHz).
    """
    freqs = transition_frequencies(p)
    f_res = float(freqs[1]) if centre is None else float(centre)
    if detunings is None:
        detunings = np.arange(-2.0, 2.0 + 1e-9, 0.2)
    detunings = np.asarray(detunings, float)
    rabi0 = rabi_frequency(p, b_drive)
    control, pos, err = [], [], []
    for i, d in enumerate(detunings):
        f_d = f_res + d
        drive = DriveField(omega=f_d, b_drive=b_drive)
        s = generalized_rabi(rabi0, d)
        half = s + 1.3
        scan = np.arange(f_d - half, f_d + half + 1e-9, scan_step)
        expected = np.array([f_d - s, f_d, f_d + s])
        out = ats_odmr(p, drive, scan, _point_noise(nm, 7000 + i))
        peaks, errs = find_spectrum_peaks(out.spectrum, sign=+1, max_peaks=3, expected=expected)
        peaks, errs = _coerce_triplet(peaks, errs)
        control.append(f_d)
        pos.append(peaks)
        err.append(errs)
    return SweepResult(
        np.asarray(control, float), pos, err,
        label=f"detuning sweep at {b_drive} uT",
        meta={"centre": f_res, "b_drive": float(b_drive), "rabi0": rabi0},
    )


def detuning_sweep_fit(result: SweepResult) -> dict:
    """Analyse a detuning sweep: recover the on-resonance Rabi frequency.

    The measured half-splitting s = (high - low)/2 at each resolved
    point is fitted to sqrt(rabi0^2 + dw^2).  Also returns the
    symmetric-side identity residuals (low + high shifts against
    2*rabi0, which vanish when the side peaks straddle the drive) and a
    linear fit of the central-peak position against drive frequency.
    """
    centre = result.meta["centre"]
    dws, s_meas, s_err = [], [], []
    ident, ident_err = [], []
    c_x, c_y, c_e = [], [], []
    for f_d, pos, err in zip(result.control, result.peak_positions, result.peak_errors):
        dw = centre - f_d
        if len(pos) == 3:
            s = (pos[2] - pos[0]) / 2
            se = np.hypot(err[2], err[0]) / 2
            dws.append(dw)
            s_meas.append(s)
            s_err.append(max(se, 1e-4))
            ident.append((pos[0] - f_d) + (pos[2] - f_d))
            ident_err.append(np.hypot(err[0], err[2]))
            c_x.append(f_d)
            c_y.append(pos[1])
            c_e.append(max(err[1], 1e-4))
        elif len(pos) == 1 and np.isfinite(pos[0]):
            c_x.append(f_d)
            c_y.append(pos[0])
            c_e.append(max(err[0], 1e-4))
    if len(dws) < 3:
        raise FitError("too few resolved triplets to fit the detuning sweep")
    dws = np.asarray(dws)
    s_meas = np.asarray(s_meas)
    s_err = np.asarray(s_err)

    def model(th):
        return np.hypot(th[0], dws)

    def jac(th):
        return (th[0] / np.hypot(th[0], dws))[:, None]

    w = 1.0 / s_err**2
    fit = analysis.levenberg_marquardt(
        model, jac, np.array([max(s_meas.min(), 1e-3)]), s_meas, w, ["rabi0"]
    )
    central = fit_line(np.asarray(c_x), np.asarray(c_y), np.asarray(c_e))
    return {
        "rabi0_fit": fit,
        "delta_omega": dws,
        "half_splitting": s_meas,
        "half_splitting_err": s_err,
        "side_sum_identity": np.asarray(ident),
        "side_sum_identity_err": np.asarray(ident_err),
        "central_line": central,
    }


# ---------------------------------------------------------------------------
# Rabi


def rabi_scan(
    p: NVParams = NVParams(),
    drive: DriveField | None = None,
    probe_rabi: float = ECHO_PROBE_RABI,
    durations: np.ndarray | None = None,
    nm: NoiseModel = DEFAULT_NOISE,
    target_mi: int = +1,
) -> RabiResult:
    """Probe Rabi oscillation at fixed sequence length.

    Undressed (``drive=None``): a resonant probe pulse of scanned
    duration on the target hyperfine line.  Dressed: the same scan with
    the continuous drive on; the probe sits at the drive frequency with
    its phase locked to the drive, so the oscillation frequency reads
    the probe's contribution to the total rotation rate.  The two
    variants oscillate at the same frequency when the probe field
    couples identically to bare and dressed states.
    """
    f_line = float(transition_frequencies(p)[1 - target_mi])
    if durations is None:
        durations = np.linspace(0.08, 2.0 / probe_rabi, 40)
    durations = np.asarray(durations, float)
    t_max = float(durations[-1])
    dressed = drive is not None
    ro = ReadoutModel(
        init_mode=InitMode.POLARIZE_TO_MINUS_1 if dressed else InitMode.POLARIZE_TO_0,
        init_fidelity=ATS_INIT_FIDELITY if dressed else 1.0,
    )
    nu = drive.omega if dressed else f_line
    ys = np.empty(durations.size)
    es = np.empty(durations.size)
    for i, t in enumerate(durations):
        seq = PulseSequence((
            laser_init(LASER_US, drive_on=dressed),
            mw_pulse(float(t), nu, probe_rabi, 0.0, drive_on=dressed),
            wait(t_max - float(t) + 0.3, drive_on=dressed),
            readout_marker(drive_on=dressed),
        ))
        r = run_sequence(p, drive, seq, _point_noise(nm, 300 + i), ro)
        ys[i] = r.signal
        es[i] = r.stderr
    curve = DecayCurve(durations, ys, np.maximum(es, 0.0))
    fit = fit_sinusoid(curve)
    return RabiResult(curve, fit)


# ---------------------------------------------------------------------------
# Echo


def _echo_sequence(nu, probe_rabi, tau, pad0, final_phase, gap, balance, dressed):
    t_half = 1.0 / (4.0 * probe_rabi) * (2.0 if dressed else 1.0)
    t_pi = 2.0 * t_half
    return PulseSequence((
        laser_init(LASER_US, drive_on=dressed),
        wait(pad0, drive_on=dressed),
        mw_pulse(t_half, nu, probe_rabi, np.pi / 2 if dressed else 0.0, drive_on=dressed),
        wait(tau, drive_on=dressed),
        mw_pulse(t_pi, nu, probe_rabi, np.pi / 2 if dressed else 0.0, drive_on=dressed),
        wait(tau, drive_on=dressed),
        mw_pulse(t_half, nu, probe_rabi, final_phase, drive_on=dressed),
        wait(gap, drive_on=dressed),
        readout_marker(drive_on=dressed),
        wait(balance, drive_on=dressed),
    ), phase_cycle=None)


def _echo_point(p, drive, nu, probe_rabi, tau, pad0, gap, balance, nm, ro, dressed):
    base = np.pi / 2 if dressed else 0.0
    seq = _echo_sequence(nu, probe_rabi, tau, pad0, base, gap, balance, dressed)
    seq = PulseSequence(seq.elements, phase_cycle=(base, base + np.pi))
    return run_sequence(p, drive, seq, nm, ro)


def echo_scan(
    p: NVParams = NVParams(),
    dressed: bool = False,
    taus: np.ndarray | None = None,
    probe_rabi: float = ECHO_PROBE_RABI,
    drive_rabi: float = ECHO_DRIVE_RABI,
    nm: NoiseModel = DEFAULT_NOISE,
    target_mi: int = +1,
    fix_offset: bool = True,
) -> EchoResult:
    """Phase-cycled echo decay; fits a single exponential.

    The undressed variant runs pi/2 - tau - pi - tau - pi/2(+-) on the
    bare line.  The dressed variant keeps the drive on throughout
    (including initialization), places the pulses on the lower dressed
    side resonance, and phases them for maximum cycled contrast using a
    short noise-on contrast calibration.  The curve axis is the total
    free evolution time 2*tau.
    """
    f_line = float(transition_frequencies(p)[1 - target_mi])
    if dressed:
        drive = DriveField(omega=f_line, b_drive=drive_rabi / p.gamma * 1e3)
        period = 1.0 / drive_rabi
        nu = f_line - drive_rabi
        if taus is None:
            taus = np.linspace(8.0, 340.0, 14)
        taus = _snap_grid(taus, period)
        gap = _snap_up(0.3, period)
        pad0 = _calibrate_echo_pad(p, drive, nu, probe_rabi, period, nm)
        ro = ReadoutModel(init_mode=InitMode.POLARIZE_TO_MINUS_1, init_fidelity=ATS_INIT_FIDELITY)
    else:
        drive = None
        period = 1.0 / p.a_hf if p.a_hf > 0 else 0.5
        nu = f_line
        if taus is None:
            taus = undressed_tau_grid(4.2, p)
        else:
            taus = _snap_grid(taus, period)
        gap = 0.3
        pad0 = 0.0
        ro = ReadoutModel()
    t_half = 1.0 / (4.0 * probe_rabi) * (2.0 if dressed else 1.0)
    fixed = LASER_US + pad0 + 4 * t_half + gap
    t_seq = fixed + 2 * float(taus[-1]) + 1.0
    ys = np.empty(taus.size)
    es = np.empty(taus.size)
    for i, tau in enumerate(taus):
        balance = t_seq - fixed - 2 * float(tau)
        r = _echo_point(
            p, drive, nu, probe_rabi, float(tau), pad0, gap, balance,
            _point_noise(nm, 500 + i), ro, dressed,
        )
        ys[i] = r.signal
        es[i] = r.stderr
    sign = np.sign(np.mean(ys[: max(taus.size // 3, 2)]))
    sign = sign if sign != 0 else 1.0
    curve = DecayCurve(2 * taus, sign * ys, np.maximum(es, 0.0))
    fit = fit_exp_decay(curve, fix_offset=fix_offset)
    return EchoResult(curve, fit)


def _calibrate_echo_pad(p, drive, nu, probe_rabi, period, nm, n_pads=8):
    """Pick the pre-pulse pad maximizing cycled echo contrast.

    The dressed pulse response depends on the drive phase at the pulse
    arrival through the non-secular part of the probe coupling, so the
    contrast is calibrated once per configuration, with the bath on so
    that short-lived coherence pathways do not bias the choice.
    """
    ro = ReadoutModel(init_mode=InitMode.POLARIZE_TO_MINUS_1, init_fidelity=ATS_INIT_FIDELITY)
    tau = _snap_up(12.0, period)
    nm_c = NoiseModel(tau_c=nm.tau_c, sigma_b=nm.sigma_b, seed=_point_seed(nm.seed, 990), n_traj=max(nm.n_traj // 8, 60))
    best_pad, best = 0.0, -1.0
    for k in range(n_pads):
        pad = k * period / n_pads
        r = _echo_point(p, drive, nu, probe_rabi, tau, pad, _snap_up(0.3, period), 1.0, nm_c, ro, True)
        if abs(r.signal) > best:
            best, best_pad = abs(r.signal), pad
    return best_pad


# ---------------------------------------------------------------------------
# Noise calibration


def calibrate_noise(
    p: NVParams = NVParams(),
    target_t2: float = 4.2,
    tau_c: float = 10.0,
    seed: int = 2024,
    n_traj: int = 600,
    tol: float = 0.10,
    max_iter: int = 20,
) -> CalibrationResult:
    """Bisection of the bath amplitude to a target undressed echo time.

    The fitted echo time constant decreases monotonically with sigma_b;
    the bracket is widened automatically if the initial one does not
    contain the target.  Rejects unphysical targets (non-finite or
    non-positive).
    """
    if not math.isfinite(target_t2) or target_t2 <= 0:
        raise ValueError("target echo time must be finite and positive")
    taus = undressed_tau_grid(target_t2, p)

    def measure(sigma):
        nm = NoiseModel(tau_c=tau_c, sigma_b=sigma, seed=seed, n_traj=n_traj)
        res = echo_scan(p, dressed=False, taus=taus, nm=nm)
        # a bath strong enough to kill the signal inside the first grid
        # point reads as "far below target", not as a trustworthy fit
        floor = 4.0 * float(np.median(res.curve.y_err)) + 1e-9
        if abs(res.fit["amplitude"]) < floor:
            return 0.0
        return res.t2 if res.fit.converged or res.fit.message.startswith("window") else math.inf

    history = []
    lo, hi = 0.03, 0.6
    t_lo = measure(lo)
    history.append((lo, t_lo))
    t_hi = measure(hi)
    history.append((hi, t_hi))
    n_widen = 0
    while t_lo < target_t2 and lo > 5e-4:
        lo /= 3.0
        t_lo = measure(lo)
        history.append((lo, t_lo))
        n_widen += 1
    while t_hi > target_t2 and hi < 5.0:
        hi *= 2.0
        t_hi = measure(hi)
        history.append((hi, t_hi))
        n_widen += 1
    if t_lo < target_t2 or t_hi > target_t2:
        raise PhysicsError(
            f"target T2={target_t2} us not bracketed: T2({lo})={t_lo}, T2({hi})={t_hi}"
        )
    sigma = math.sqrt(lo * hi)
    t_mid = measure(sigma)
    history.append((sigma, t_mid))
    for it in range(max_iter):
        if abs(t_mid - target_t2) <= tol * target_t2:
            break
        if t_mid > target_t2:
            lo = sigma
        else:
            hi = sigma
        sigma = math.sqrt(lo * hi)
        t_mid = measure(sigma)
        history.append((sigma, t_mid))
    return CalibrationResult(
        sigma_b=sigma,
        achieved_t2=t_mid,
        target_t2=target_t2,
        iterations=len(history),
        history=history,
    )

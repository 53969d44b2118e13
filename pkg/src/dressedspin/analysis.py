"""Nonlinear least-squares fitters for spectra and decay curves.

A single damped Gauss-Newton (Levenberg-Marquardt) core drives four
models, each with an analytic Jacobian:

- the driven-spin triplet spectrum (central + two side Lorentzians with
  their fixed 1 : 3/4 weight and 1 : 3/2 width structure) plus offset,
- a single Lorentzian peak (used for per-peak refinement),
- a sinusoid seeded from the discrete spectrum of the data,
- a single-exponential decay,

plus closed-form weighted linear regression.  Reported 1-sigma
uncertainties come from the local quadratic model at the optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FitResult",
    "FitError",
    "levenberg_marquardt",
    "fit_mollow",
    "fit_lorentzian",
    "fit_sinusoid",
    "fit_exp_decay",
    "fit_line",
]

STEP_TOL = 1e-10       # relative parameter step declaring convergence
GRAD_TOL = 1e-8        # scaled gradient norm bound implied by "converged"
MAX_ITER = 200


class FitError(RuntimeError):
    """A fit could not be set up (bad inputs, unusable data)."""


@dataclass
class FitResult:
    """Outcome of a least-squares fit.

    ``params`` maps parameter names to values, ``sigmas`` to 1-sigma
    uncertainties from the local quadratic model.  ``converged`` is only
    set when the scaled gradient norm dropped below tolerance;
    ``message`` carries degeneracy or failure diagnostics.
    """

    names: list[str]
    values: np.ndarray
    sigmas: np.ndarray
    residual_norm: float
    converged: bool
    iterations: int
    message: str = ""

    @property
    def params(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))

    @property
    def uncertainties(self) -> dict[str, float]:
        return dict(zip(self.names, self.sigmas.tolist()))

    def __getitem__(self, name: str) -> float:
        return self.values[self.names.index(name)]

    def sigma(self, name: str) -> float:
        return self.sigmas[self.names.index(name)]


def _weights(y, y_err):
    if y_err is None:
        return np.ones_like(y)
    y_err = np.asarray(y_err, dtype=float)
    if np.any(y_err < 0):
        raise FitError("negative uncertainties")
    floor = 1e-12 * max(float(np.max(y_err)), 1.0)
    return 1.0 / np.maximum(y_err, floor) ** 2


def levenberg_marquardt(
    model,
    jacobian,
    theta0: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    names: list[str],
    max_iter: int = MAX_ITER,
) -> FitResult:
    """Minimize sum_i w_i (y_i - model(theta))_i^2 by damped Gauss-Newton.

    ``model(theta)`` returns the model values, ``jacobian(theta)`` the
    (n_points, n_params) derivative matrix.  Damping is adapted
    multiplicatively; iteration stops when the relative step drops below
    ``STEP_TOL`` or the iteration budget runs out.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    w = np.asarray(weights, dtype=float)
    sw = np.sqrt(w)
    lam = 1e-3
    r = y - model(theta)
    cost = float(np.sum(w * r * r))
    n_iter = 0
    converged_step = False
    for n_iter in range(1, max_iter + 1):
        jac = jacobian(theta)
        jw = jac * sw[:, None]
        rw = r * sw
        jtj = jw.T @ jw
        g = jw.T @ rw
        diag = np.diag(jtj).copy()
        diag[diag <= 0] = 1.0
        step = None
        for _ in range(40):
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = theta + step
            r_trial = y - model(trial)
            cost_trial = float(np.sum(w * r_trial * r_trial))
            if np.isfinite(cost_trial) and cost_trial <= cost:
                theta, r, cost = trial, r_trial, cost_trial
                lam = max(lam / 10, 1e-14)
                break
            lam *= 10
        else:
            break
        scale = np.maximum(np.abs(theta), 1e-30)
        if np.all(np.abs(step) <= STEP_TOL * scale):
            converged_step = True
            break

    jac = jacobian(theta)
    jw = jac * sw[:, None]
    g = jw.T @ (r * sw)
    gnorm = float(np.max(np.abs(g)))
    gscale = max(cost, 1e-30)
    converged = converged_step and gnorm <= GRAD_TOL * max(gscale, 1.0)

    sigmas = _parameter_sigmas(jw, r * sw, len(theta))
    return FitResult(
        names=list(names),
        values=theta,
        sigmas=sigmas,
        residual_norm=float(np.sqrt(cost)),
        converged=converged,
        iterations=n_iter,
        message="" if converged else "did not reach gradient tolerance",
    )


def _parameter_sigmas(jw, rw, n_params):
    """1-sigma uncertainties from (J^T W J)^-1, chi-square scaled."""
    n = rw.size
    jtj = jw.T @ jw
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        return np.full(n_params, np.inf)
    dof = max(n - n_params, 1)
    chi2_red = float(rw @ rw) / dof
    # With supplied y_err the reduced chi-square is ~1 and this is a mild
    # rescale; without, it estimates the noise level from the residuals.
    return np.sqrt(np.maximum(np.diag(cov) * max(chi2_red, 1e-300), 0.0))


# ---------------------------------------------------------------------------
# Triplet spectrum model


def _mollow_profile(x, rabi, kappa):
    k2 = kappa * kappa
    central = (kappa / 4) / (x * x + k2 / 4)
    low = (3 * kappa / 16) / ((x + rabi) ** 2 + 9 * k2 / 16)
    high = (3 * kappa / 16) / ((x - rabi) ** 2 + 9 * k2 / 16)
    return central + low + high


def _mollow_profile_jac(x, rabi, kappa):
    k2 = kappa * kappa
    dc = x * x + k2 / 4
    dl = (x + rabi) ** 2 + 9 * k2 / 16
    dh = (x - rabi) ** 2 + 9 * k2 / 16
    # d/dOmega: side peaks move, central does not
    d_rabi = (3 * kappa / 16) * (
        -2 * (x + rabi) / dl**2 + 2 * (x - rabi) / dh**2
    )
    d_kappa = (
        (dc / 4 - (kappa / 4) * (kappa / 2)) / dc**2
        + (3 * dl / 16 - (3 * kappa / 16) * (9 * kappa / 8)) / dl**2
        + (3 * dh / 16 - (3 * kappa / 16) * (9 * kappa / 8)) / dh**2
    )
    return d_rabi, d_kappa


def fit_mollow(spectrum, init=None) -> FitResult:
    """Fit amplitude * triplet(omega, Omega, kappa) + offset to a spectrum.

    ``spectrum`` provides x (MHz), y and optional y_err arrays (duck
    typed: any object with those attributes, or an (x, y, y_err) tuple).
    Initial values are taken from ``init`` (a MollowParams) when given,
    otherwise seeded from the extrema of the data.  A fit whose resolved
    splitting falls below kappa/2 is flagged degenerate because the side
    peaks merge into the central line there.
    """
    x, y, y_err = _spectrum_arrays(spectrum)
    if x.size < 10:
        raise FitError("need at least 10 samples spanning the triplet")
    w = _weights(y, y_err)

    # Work in translated coordinates so the fit is exactly equivariant
    # under shifting the frequency axis.
    x0 = float(x[np.argmax(np.abs(y - np.median(y)))])
    xs = x - x0

    if init is not None:
        omega0, rabi0, kappa0 = init.omega - x0, init.rabi, init.kappa
        sign = 1.0 if np.max(y) - np.median(y) >= np.median(y) - np.min(y) else -1.0
        amp0 = sign * max(abs(np.max(y) - np.median(y)), abs(np.median(y) - np.min(y)))
        off0 = float(np.median(y))
        kappa0 = max(kappa0, 1e-6)
        amp0 = amp0 / _mollow_profile(np.array([0.0]), rabi0, kappa0)[0]
    else:
        omega0, rabi0, kappa0, amp0, off0 = _seed_mollow(xs, y)

    def model(th):
        omega, rabi, kappa, amp, off = th
        return amp * _mollow_profile(xs - omega, abs(rabi), abs(kappa)) + off

    def jac(th):
        omega, rabi, kappa, amp, off = th
        rabi_a, kappa_a = abs(rabi), abs(kappa)
        u = xs - omega
        prof = _mollow_profile(u, rabi_a, kappa_a)
        d_rabi, d_kappa = _mollow_profile_jac(u, rabi_a, kappa_a)
        k2 = kappa_a * kappa_a
        dc = u * u + k2 / 4
        dl = (u + rabi_a) ** 2 + 9 * k2 / 16
        dh = (u - rabi_a) ** 2 + 9 * k2 / 16
        d_omega = amp * (
            (kappa_a / 4) * 2 * u / dc**2
            + (3 * kappa_a / 16) * 2 * (u + rabi_a) / dl**2
            + (3 * kappa_a / 16) * 2 * (u - rabi_a) / dh**2
        )
        cols = [
            d_omega,
            amp * d_rabi * np.sign(rabi) if rabi != 0 else amp * d_rabi,
            amp * d_kappa * np.sign(kappa) if kappa != 0 else amp * d_kappa,
            prof,
            np.ones_like(u),
        ]
        return np.column_stack(cols)

    theta0 = np.array([omega0, rabi0, kappa0, amp0, off0])
    res = levenberg_marquardt(
        model, jac, theta0, y, w, ["omega", "rabi", "kappa", "amplitude", "offset"]
    )
    res.values[0] += x0
    res.values[1] = abs(res.values[1])
    res.values[2] = abs(res.values[2])
    if res.values[1] < res.values[2] / 2:
        res.message = (
            "degenerate: splitting below kappa/2, side peaks unresolved"
        )
        res.converged = False
    return res


def _seed_mollow(xs, y):
    off0 = float(np.median(y))
    centred = y - off0
    sign = 1.0 if np.max(centred) >= -np.min(centred) else -1.0
    yy = sign * centred
    i_max = int(np.argmax(yy))
    omega0 = float(xs[i_max])
    # half-maximum width of the central feature
    half = yy[i_max] / 2
    above = np.where(yy >= half)[0]
    if above.size >= 2:
        kappa0 = max(2.0 * (xs[above[-1]] - xs[above[0]]) / 2.0, np.ptp(xs) / 50)
    else:
        kappa0 = np.ptp(xs) / 20
    # flanking extrema outside the central feature
    mask = np.abs(xs - omega0) > 1.5 * kappa0
    if np.any(mask):
        i_side = int(np.argmax(np.where(mask, yy, -np.inf)))
        rabi0 = abs(float(xs[i_side]) - omega0)
    else:
        rabi0 = np.ptp(xs) / 4
    rabi0 = max(rabi0, kappa0)
    amp0 = sign * yy[i_max] / _mollow_profile(np.array([0.0]), rabi0, kappa0)[0]
    return omega0, rabi0, kappa0, amp0, off0


def _spectrum_arrays(spectrum):
    if hasattr(spectrum, "x"):
        x = np.asarray(spectrum.x, dtype=float)
        y = np.asarray(spectrum.y, dtype=float)
        y_err = getattr(spectrum, "y_err", None)
    else:
        x, y, *rest = spectrum
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        y_err = rest[0] if rest else None
    if y_err is not None:
        y_err = np.asarray(y_err, dtype=float)
        if not np.any(y_err > 0):
            y_err = None
    return x, y, y_err


# ---------------------------------------------------------------------------
# Single Lorentzian


def fit_lorentzian(x, y, y_err=None, centre0=None) -> FitResult:
    """Fit amp / (1 + ((x-centre)/hwhm)^2) + offset.

    Used for per-peak position refinement; ``amp`` may be negative for
    dips.  ``centre0`` seeds the peak position (defaults to the extremum
    of the data).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 5:
        raise FitError("need at least 5 samples for a Lorentzian fit")
    w = _weights(y, y_err)
    off0 = float(np.median(y))
    centred = y - off0
    i_ext = int(np.argmax(np.abs(centred)))
    amp0 = float(centred[i_ext])
    c0 = float(x[i_ext]) if centre0 is None else float(centre0)
    span = np.ptp(x)
    hwhm0 = max(span / 10, 1e-9)
    xref = c0
    xs = x - xref

    def model(th):
        c, hwhm, amp, off = th
        return amp / (1 + ((xs - c) / hwhm) ** 2) + off

    def jac(th):
        c, hwhm, amp, off = th
        u = (xs - c) / hwhm
        denom = (1 + u * u) ** 2
        d_c = amp * 2 * u / (hwhm * denom)
        d_h = amp * 2 * u * u / (hwhm * denom)
        d_a = 1 / (1 + u * u)
        return np.column_stack([d_c, d_h, d_a, np.ones_like(u)])

    theta0 = np.array([0.0, hwhm0, amp0, off0])
    res = levenberg_marquardt(model, jac, theta0, y, w, ["centre", "hwhm", "amplitude", "offset"])
    res.values[0] += xref
    res.values[1] = abs(res.values[1])
    return res


# ---------------------------------------------------------------------------
# Sinusoid


def fit_sinusoid(curve) -> FitResult:
    """Fit amp * cos(2 pi f t + phase) + offset to an oscillating signal.

    The frequency is seeded from the peak of the discrete spectrum of
    the de-meaned data (refined by parabolic interpolation), then the
    full model is polished by least squares.  Data without a spectral
    peak above the noise floor are flagged non-converged.
    """
    t, y, y_err = _curve_arrays(curve)
    if t.size < 8:
        raise FitError("need at least 8 samples to fit an oscillation")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise FitError("time axis must be strictly increasing")
    if np.ptp(dt) > 1e-6 * dt.mean():
        # resample onto a uniform grid for the FFT seed only
        tu = np.linspace(t[0], t[-1], t.size)
        yu = np.interp(tu, t, y)
    else:
        tu, yu = t, y
    f0, strong = _spectral_peak(tu, yu)
    w = _weights(y, y_err)
    off0 = float(np.mean(y))

    if not strong:
        return FitResult(
            names=["frequency", "amplitude", "phase", "offset"],
            values=np.array([0.0, 0.0, 0.0, off0]),
            sigmas=np.full(4, np.inf),
            residual_norm=float(np.sqrt(np.sum(w * (y - off0) ** 2))),
            converged=False,
            iterations=0,
            message="no spectral peak above the noise floor",
        )

    # linear phase/amplitude seed at fixed f0
    c = np.cos(2 * np.pi * f0 * t)
    s = np.sin(2 * np.pi * f0 * t)
    a_c = float(np.sum((y - off0) * c) * 2 / t.size)
    a_s = float(np.sum((y - off0) * s) * 2 / t.size)
    amp0 = float(np.hypot(a_c, a_s))
    phase0 = float(np.arctan2(-a_s, a_c))

    def model(th):
        f, amp, ph, off = th
        return amp * np.cos(2 * np.pi * f * t + ph) + off

    def jac(th):
        f, amp, ph, off = th
        arg = 2 * np.pi * f * t + ph
        sn = np.sin(arg)
        return np.column_stack(
            [-amp * 2 * np.pi * t * sn, np.cos(arg), -amp * sn, np.ones_like(t)]
        )

    theta0 = np.array([f0, amp0, phase0, off0])
    res = levenberg_marquardt(model, jac, theta0, y, w, ["frequency", "amplitude", "phase", "offset"])
    if res.values[1] < 0:
        res.values[1] = -res.values[1]
        res.values[2] += np.pi
    res.values[0] = abs(res.values[0])
    res.values[2] = float(np.angle(np.exp(1j * res.values[2])))
    return res


def _spectral_peak(t, y):
    """Frequency of the dominant non-DC component and whether it stands out."""
    n = t.size
    yc = y - np.mean(y)
    spec = np.abs(np.fft.rfft(yc, n=8 * n)) ** 2
    freqs = np.fft.rfftfreq(8 * n, d=(t[-1] - t[0]) / (n - 1))
    spec[0] = 0.0
    i = int(np.argmax(spec))
    if spec[i] <= 0:
        return 0.0, False
    # peak must dominate the typical background
    background = np.median(spec[1:])
    strong = spec[i] > 25 * max(background, 1e-300)
    if 0 < i < spec.size - 1:
        # parabolic interpolation on log power
        s0, s1, s2 = np.log(np.maximum(spec[i - 1 : i + 2], 1e-300))
        denom = s0 - 2 * s1 + s2
        shift = 0.5 * (s0 - s2) / denom if denom != 0 else 0.0
        shift = float(np.clip(shift, -0.5, 0.5))
    else:
        shift = 0.0
    return float(freqs[i] + shift * (freqs[1] - freqs[0])), bool(strong)


def _curve_arrays(curve):
    if hasattr(curve, "t"):
        t = np.asarray(curve.t, dtype=float)
        y = np.asarray(curve.y, dtype=float)
        y_err = getattr(curve, "y_err", None)
    else:
        t, y, *rest = curve
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        y_err = rest[0] if rest else None
    if y_err is not None:
        y_err = np.asarray(y_err, dtype=float)
        if not np.any(y_err > 0):
            y_err = None
    return t, y, y_err


# ---------------------------------------------------------------------------
# Exponential decay


def fit_exp_decay(curve, fix_offset: bool = False) -> FitResult:
    """Fit amp * exp(-t / T) + offset.

    ``fix_offset=True`` pins the offset at zero; phase-cycled echo
    amplitudes decay to zero by construction and the two-parameter form
    stays well conditioned when the window is much shorter than T.

    Data that do not decay (fitted T running beyond 50x the observation
    window, or an essentially flat input) are flagged.  The post-hoc
    identifiability check requires the window to reach T/2.
    """
    t, y, y_err = _curve_arrays(curve)
    if t.size < 6:
        raise FitError("need at least 6 points to fit a decay")
    w = _weights(y, y_err)
    t_span = float(t[-1] - t[0])
    t_cap = 50 * max(t_span, 1e-30)

    off0 = 0.0 if fix_offset else (float(np.min(y)) if y[0] >= y[-1] else float(np.max(y)))
    amp0 = float(y[0] - off0)
    # crossing of amp/e seeds the time constant
    target = off0 + amp0 / np.e
    idx = np.where((y - target) * np.sign(amp0 if amp0 else 1.0) <= 0)[0]
    tau0 = float(t[idx[0]] - t[0]) if idx.size and idx[0] > 0 else t_span / 2
    tau0 = min(max(tau0, t_span / 100), t_cap)

    tref = float(t[0])
    ts = t - tref

    if fix_offset:
        def model(th):
            tau, amp = th
            return amp * np.exp(-ts / abs(tau))

        def jac(th):
            tau, amp = th
            tau_a = abs(tau)
            e = np.exp(-ts / tau_a)
            return np.column_stack([amp * e * ts / tau_a**2 * np.sign(tau), e])

        theta0 = np.array([tau0, amp0])
        res = levenberg_marquardt(model, jac, theta0, y, w, ["t_decay", "amplitude"])
        res.names.append("offset")
        res.values = np.append(res.values, 0.0)
        res.sigmas = np.append(res.sigmas, 0.0)
    else:
        def model(th):
            tau, amp, off = th
            return amp * np.exp(-ts / abs(tau)) + off

        def jac(th):
            tau, amp, off = th
            tau_a = abs(tau)
            e = np.exp(-ts / tau_a)
            return np.column_stack(
                [amp * e * ts / tau_a**2 * np.sign(tau), e, np.ones_like(ts)]
            )

        theta0 = np.array([tau0, amp0, off0])
        res = levenberg_marquardt(model, jac, theta0, y, w, ["t_decay", "amplitude", "offset"])
    res.values[0] = abs(res.values[0])

    flat = np.ptp(y) <= 1e-12 * max(abs(np.mean(y)), 1.0)
    if flat or res.values[0] > t_cap or abs(res.values[1]) < 1e-12 * max(abs(res.values[2]), 1.0):
        res.converged = False
        res.message = "non-decaying data: time constant at bound"
    elif t_span < res.values[0] / 2:
        res.message = "window shorter than T/2, time constant poorly identified"
    return res


# ---------------------------------------------------------------------------
# Weighted line


def fit_line(x, y, y_err=None) -> FitResult:
    """Closed-form weighted least squares for y = slope * x + intercept."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise FitError("need at least 2 points for a line")
    if np.ptp(x) == 0:
        raise FitError("all x values identical; slope undefined")
    w = _weights(y, y_err)
    sw = np.sum(w)
    xbar = np.sum(w * x) / sw
    ybar = np.sum(w * y) / sw
    sxx = np.sum(w * (x - xbar) ** 2)
    slope = np.sum(w * (x - xbar) * (y - ybar)) / sxx
    intercept = ybar - slope * xbar
    r = y - slope * x - intercept
    chi2 = float(np.sum(w * r * r))
    dof = x.size - 2
    var_scale = 1.0 if y_err is not None else chi2 / max(dof, 1)
    if y_err is not None and dof > 0:
        var_scale = max(chi2 / dof, 1.0)
    sig_slope = np.sqrt(var_scale / sxx)
    sig_inter = np.sqrt(var_scale * (1 / sw + xbar**2 / sxx))
    msg = ""
    if dof == 0:
        msg = "saturated fit: two points, chi-square undefined"
        sig_slope = np.sqrt(1.0 / sxx)
        sig_inter = np.sqrt(1 / sw + xbar**2 / sxx)
    return FitResult(
        names=["slope", "intercept"],
        values=np.array([slope, intercept]),
        sigmas=np.array([sig_slope, sig_inter]),
        residual_norm=float(np.sqrt(chi2)),
        converged=True,
        iterations=0,
        message=msg,
    )

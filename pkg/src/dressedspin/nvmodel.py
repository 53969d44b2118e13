"""NV ground-state Hamiltonian and analytic driven-spin relations.

The static model is the secular spin Hamiltonian of the NV electron spin
(S = 1) coupled to the host-nitrogen nuclear spin (I = 1),

    H = D Sz^2 + gamma B0 Sz + A Sz Iz          [MHz]

with D the zero-field splitting, gamma the gyromagnetic ratio (MHz/mT),
B0 the static field along the NV axis (mT) and A the secular hyperfine
constant.  With this sign choice the |0> -> |-1> transitions move *down*
in frequency as B0 grows, which is the branch all experiments in this
package address.

On top sit the closed-form results for a near-resonantly driven two-level
subspace: the rotating-frame Hamiltonian, the Mollow-triplet probe
spectrum, the generalized Rabi frequency, the side-peak bookkeeping used
by the detuning sweeps, and the dressed-state energy ladder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spincore import spin_operators, tensor

__all__ = [
    "NVParams",
    "DriveField",
    "MollowParams",
    "DressedLevel",
    "nv_hamiltonian",
    "transition_frequencies",
    "rabi_frequency",
    "rotating_frame",
    "mollow_spectrum",
    "generalized_rabi",
    "side_peak_shifts",
    "dressed_ladder",
]

# Default constants.  D and gamma are not tuned quantities: gamma follows
# from g_e mu_B / h = 28.02 MHz/mT and D = 2870 MHz is the textbook NV
# zero-field splitting.  B0 is chosen so the centre hyperfine transition
# |0,0> -> |-1,0> lands exactly on 2837.05 MHz, the default drive
# frequency of the experiment recipes.
DEFAULT_D = 2870.0
DEFAULT_GAMMA = 28.03
DEFAULT_A = 2.1
CENTRE_TRANSITION = 2837.05
DEFAULT_B0 = (DEFAULT_D - CENTRE_TRANSITION) / DEFAULT_GAMMA

# A drive is treated as rotating-wave-safe only if every transition of the
# opposite electron branch is at least this many Rabi periods detuned.
RWA_MARGIN = 10.0


class PhysicsError(ValueError):
    """A run was requested outside the model's domain of validity."""


@dataclass(frozen=True)
class NVParams:
    """Static constants of the spin system.

    d        : zero-field splitting (MHz)
    gamma    : gyromagnetic ratio (MHz/mT)
    a_hf     : secular 14N hyperfine constant (MHz)
    b0       : static field along the NV axis (mT)
    """

    d: float = DEFAULT_D
    gamma: float = DEFAULT_GAMMA
    a_hf: float = DEFAULT_A
    b0: float = DEFAULT_B0

    def __post_init__(self):
        if self.d <= 0:
            raise ValueError("zero-field splitting must be positive")
        if self.gamma <= 0:
            raise ValueError("gyromagnetic ratio must be positive")
        if self.a_hf < 0:
            raise ValueError("hyperfine constant must be non-negative")
        if self.b0 < 0:
            raise ValueError("static field must be non-negative")


@dataclass(frozen=True)
class DriveField:
    """Continuous microwave drive.

    omega    : drive frequency (MHz)
    b_drive  : drive amplitude (uT)
    phase    : phase at sequence time zero (rad)
    """

    omega: float
    b_drive: float
    phase: float = 0.0

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("drive frequency must be positive")
        if self.b_drive < 0:
            raise ValueError("drive amplitude must be non-negative")


@dataclass(frozen=True)
class MollowParams:
    """Parameters of the three-Lorentzian driven-spin probe spectrum.

    omega       : drive frequency (MHz)
    rabi        : generalized Rabi frequency Omega (MHz), half the side-peak split
    kappa       : inverse dephasing time (MHz), sets the linewidths
    delta_omega : drive detuning from the bare resonance (MHz)
    rabi0       : on-resonance Rabi frequency (MHz)
    """

    omega: float
    rabi: float
    kappa: float
    delta_omega: float = 0.0
    rabi0: float = 0.0

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.rabi < 0 or self.rabi0 < 0:
            raise ValueError("Rabi frequencies must be non-negative")


@dataclass(frozen=True)
class DressedLevel:
    """One rung of the dressed-state ladder (hbar = 1, energies in MHz)."""

    n: int
    e_plus: float
    e_minus: float
    c1: float
    c2: float

    splitting: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "splitting", self.e_plus - self.e_minus)


def nv_hamiltonian(p: NVParams) -> np.ndarray:
    """9x9 secular Hamiltonian in the |m_s> (x) |m_I> product basis, MHz."""
    sx, sy, sz = spin_operators(1)
    _, _, iz = spin_operators(1)
    eye3 = np.eye(3)
    return (
        p.d * tensor(sz @ sz, eye3)
        + p.gamma * p.b0 * tensor(sz, eye3)
        + p.a_hf * tensor(sz, iz)
    )


def transition_frequencies(p: NVParams, branch: int = -1) -> np.ndarray:
    """Frequencies of the |0,m_I> -> |branch,m_I> transitions, MHz.

    Returned in nuclear-spin order m_I = (+1, 0, -1).  ``branch`` selects
    the m_s = -1 (default) or +1 electron branch.
    """
    if branch not in (-1, +1):
        raise ValueError("branch must be -1 or +1")
    mi = np.array([1.0, 0.0, -1.0])
    return p.d + branch * (p.gamma * p.b0 + p.a_hf * mi)


def rabi_frequency(p: NVParams, b_drive_ut: float) -> float:
    """On-resonance Rabi frequency gamma * B_drive, with B_drive in uT."""
    return p.gamma * b_drive_ut * 1e-3


def rotating_frame(p: NVParams, d: DriveField, target_mi: int) -> np.ndarray:
    """2x2 rotating-frame Hamiltonian for one |0,m_I> <-> |-1,m_I> manifold.

    Basis order is (|0,m_I>, |-1,m_I>).  In this basis

        H = diag(-dw/2, +dw/2) + (Omega/2) (cos(phi) sx + sin(phi) sy)

    with dw = omega0(m_I) - omega the drive detuning and
    Omega = gamma * B_drive.  Written with sigma_z = |-1><-1| - |0><0|
    this is the usual dw/2 sz + Omega/2 sx form.

    Raises ``ValueError`` when any m_s = +1 transition is closer to the
    drive than ``RWA_MARGIN`` Rabi periods, where dropping the
    counter-rotating branch is no longer justified.
    """
    if target_mi not in (-1, 0, 1):
        raise ValueError("target_mi must be one of -1, 0, +1")
    omega = rabi_frequency(p, d.b_drive)
    check_rwa(p, d.omega, omega)
    f_minus = transition_frequencies(p, branch=-1)
    dw = f_minus[1 - target_mi] - d.omega
    h = np.array(
        [
            [-dw / 2, (omega / 2) * np.exp(-1j * d.phase)],
            [(omega / 2) * np.exp(1j * d.phase), dw / 2],
        ],
        dtype=complex,
    )
    return h


def check_rwa(p: NVParams, drive_omega: float, rabi: float) -> None:
    """Reject drives that violate the rotating-wave approximation."""
    if rabi <= 0:
        return
    f_plus = transition_frequencies(p, branch=+1)
    gap = np.abs(f_plus - drive_omega).min()
    if gap < RWA_MARGIN * rabi:
        raise PhysicsError(
            f"drive at {drive_omega} MHz is {gap:.2f} MHz from the m_s=+1 branch, "
            f"closer than {RWA_MARGIN} Rabi frequencies ({RWA_MARGIN * rabi:.2f} MHz)"
        )


def mollow_spectrum(nu, m: MollowParams):
    """Probe spectrum of the driven spin: central line at the drive
    frequency plus two side lines split off by the Rabi frequency.

    Evaluates, for probe frequency ``nu`` (scalar or array, MHz),

        f(nu) = (k/4) / ((nu-w)^2 + k^2/4)
              + (3k/16) / ((nu-w-Omega)^2 + 9k^2/16)
              + (3k/16) / ((nu-w+Omega)^2 + 9k^2/16)

    with w the drive frequency, Omega the (generalized) Rabi frequency
    and k the dephasing rate.  The integral over nu is pi, independent
    of Omega.
    """
    nu = np.asarray(nu, dtype=float)
    k = m.kappa
    x = nu - m.omega
    central = (k / 4) / (x**2 + k**2 / 4)
    low = (3 * k / 16) / ((x + m.rabi) ** 2 + 9 * k**2 / 16)
    high = (3 * k / 16) / ((x - m.rabi) ** 2 + 9 * k**2 / 16)
    out = central + low + high
    return out if out.ndim else float(out)


def generalized_rabi(rabi0: float, delta_omega: float):
    """Off-resonance Rabi frequency sqrt(Omega0^2 + dw^2)."""
    rabi0 = np.asarray(rabi0, dtype=float)
    if np.any(rabi0 < 0):
        raise ValueError("on-resonance Rabi frequency must be non-negative")
    out = np.hypot(rabi0, np.asarray(delta_omega, dtype=float))
    return out if out.ndim else float(out)


def side_peak_shifts(rabi0: float, delta_omega: float) -> tuple[float, float]:
    """Bookkeeping pair (Omega0 - s, Omega0 + s) with s the generalized
    Rabi frequency.

    The two values always sum to 2*Omega0; the low one passes through 0
    at zero detuning and goes negative once |dw| > 0.  Detuning-sweep
    fits use this pair to express the side-branch positions.
    """
    if rabi0 < 0:
        raise ValueError("on-resonance Rabi frequency must be non-negative")
    s = generalized_rabi(rabi0, delta_omega)
    return rabi0 - s, rabi0 + s


def dressed_ladder(n: int, omega: float, rabi: float, delta_omega: float = 0.0) -> DressedLevel:
    """Energies and mixing coefficients of ladder rung ``n``.

    E_pm(n) = (n - 1/2) omega +- Omega/2 with Omega the generalized Rabi
    frequency passed as ``rabi``.  The mixing angle follows
    tan(theta) = Omega0 / dw with theta in (0, pi), so c1 = cos(theta/2)
    and c2 = sin(theta/2); at zero detuning both equal 1/sqrt(2).
    ``rabi`` must dominate the detuning, since Omega^2 = Omega0^2 + dw^2.
    """
    if n < 1:
        raise ValueError("ladder index must be >= 1")
    if rabi < 0:
        raise ValueError("Rabi frequency must be non-negative")
    if abs(delta_omega) > rabi * (1 + 1e-12):
        raise ValueError("generalized Rabi frequency cannot be below |detuning|")
    rabi0_sq = max(rabi**2 - delta_omega**2, 0.0)
    theta = np.arctan2(np.sqrt(rabi0_sq), delta_omega)
    e_mid = (n - 0.5) * omega
    return DressedLevel(
        n=n,
        e_plus=e_mid + rabi / 2,
        e_minus=e_mid - rabi / 2,
        c1=float(np.cos(theta / 2)),
        c2=float(np.sin(theta / 2)),
    )

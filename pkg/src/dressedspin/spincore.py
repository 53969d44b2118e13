"""Dense complex linear algebra for small spin Hilbert spaces.

Everything here works on plain ``numpy`` arrays: operators are square
complex matrices, states are complex vectors.  Hamiltonian entries are
ordinary frequencies in MHz; the factor 2*pi that converts them to angular
phase lives inside the propagators, so a resonant two-level drive of Rabi
frequency ``Omega`` flips population with period ``1/Omega`` microseconds.

Dimensions stay tiny (<= 9 here, <= 16 supported), so propagators are exact
eigendecompositions of Hermitian generators rather than step-based
integrators.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "spin_operators",
    "tensor",
    "check_hermitian",
    "check_unitary",
    "propagator",
    "propagate_piecewise",
    "su2_rotation",
]

# Validation tolerances used across the package.
HERMITICITY_TOL = 1e-12
UNITARITY_TOL = 1e-10
NORM_TOL = 1e-10


def spin_operators(s: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return the (Sx, Sy, Sz) matrices for spin quantum number ``s``.

    Only s = 1/2 and s = 1 are supported; those are the two species that
    appear in the NV ground-state problem (electron pseudo-spin and the
    full spin-1 triplet, and the spin-1 nitrogen nucleus).

    The basis is ordered by decreasing magnetic quantum number, so for
    s = 1 the diagonal of Sz reads (+1, 0, -1).
    """
    if s not in (0.5, 1.0, 1):
        raise ValueError(f"unsupported spin quantum number s={s}; expected 1/2 or 1")
    dim = int(round(2 * s + 1))
    m = s - np.arange(dim)
    sz = np.diag(m).astype(complex)
    # ladder operator S+ in the same basis: <m+1|S+|m> = sqrt(s(s+1) - m(m+1))
    raise_elem = np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1))
    sp = np.zeros((dim, dim), dtype=complex)
    sp[np.arange(dim - 1), np.arange(1, dim)] = raise_elem
    sm = sp.conj().T
    sx = (sp + sm) / 2
    sy = (sp - sm) / (2j)
    return sx, sy, sz


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product of two square operators."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"first operand is not square: shape {a.shape}")
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise ValueError(f"second operand is not square: shape {b.shape}")
    return np.kron(a, b)


def check_hermitian(h: np.ndarray, tol: float = HERMITICITY_TOL) -> None:
    """Raise ``ValueError`` unless ``h`` is Hermitian to relative ``tol``."""
    h = np.asarray(h)
    scale = max(np.abs(h).max(), 1.0)
    dev = np.abs(h - h.conj().T).max()
    if dev > tol * scale:
        raise ValueError(f"matrix is not Hermitian: max deviation {dev:.3e} (scale {scale:.3e})")


def check_unitary(u: np.ndarray, tol: float = UNITARITY_TOL) -> None:
    """Raise ``ValueError`` unless ``u`` is unitary to max-norm ``tol``."""
    u = np.asarray(u)
    dev = np.abs(u.conj().T @ u - np.eye(u.shape[0])).max()
    if dev > tol:
        raise ValueError(f"matrix is not unitary: max |U^dag U - I| = {dev:.3e}")


def propagator(h: np.ndarray, t: float) -> np.ndarray:
    """Exact propagator U = exp(-i 2*pi H t) for a Hermitian H in MHz.

    ``t`` is in microseconds.  The Hamiltonian is validated for
    hermiticity on every call; the result is unitary to machine
    precision because it is built from the eigendecomposition.
    """
    h = np.asarray(h, dtype=complex)
    check_hermitian(h)
    if t < 0:
        raise ValueError(f"negative duration {t}")
    evals, vecs = np.linalg.eigh(h)
    phases = np.exp(-2j * np.pi * evals * t)
    return (vecs * phases) @ vecs.conj().T


def propagate_piecewise(
    segments: list[tuple[np.ndarray, float]], state: np.ndarray
) -> np.ndarray:
    """Apply exp(-i 2*pi H t) for each (H, t) segment in order.

    Segments are piecewise constant; each Hamiltonian must match the
    state dimension and be Hermitian.  Returns the final state; the
    input is never mutated.
    """
    psi = np.asarray(state, dtype=complex).copy()
    for h, t in segments:
        h = np.asarray(h)
        if h.shape != (psi.size, psi.size):
            raise ValueError(
                f"dimension mismatch: H is {h.shape}, state has dim {psi.size}"
            )
        psi = propagator(h, t) @ psi
    return psi


def su2_rotation(
    bx: np.ndarray, by: np.ndarray, bz: np.ndarray, dt: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form SU(2) propagator entries for H = bx*sx + by*sy + bz*sz.

    Coefficients are in MHz (sx, sy, sz the Pauli matrices) and may be
    arrays of any common shape; ``dt`` is in microseconds.  Returns the
    four entries (u00, u01, u10, u11) of exp(-i 2*pi H dt), evaluated
    with a sinc form that is exact and safe as |b| -> 0.  For a 2x2
    Hermitian H this is identical to the eigendecomposition route in
    :func:`propagator`, just vectorised.
    """
    r = np.sqrt(bx * bx + by * by + bz * bz)
    ang = 2.0 * dt  # np.sinc carries the remaining factor pi
    c = np.cos(np.pi * ang * r)
    s_over_r = np.pi * ang * np.sinc(ang * r)  # = sin(2 pi r dt)/r, finite at r=0
    u00 = c - 1j * bz * s_over_r
    u11 = c + 1j * bz * s_over_r
    u01 = -1j * (bx - 1j * by) * s_over_r
    u10 = -1j * (bx + 1j * by) * s_over_r
    return u00, u01, u10, u11

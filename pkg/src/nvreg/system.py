"""Spin-register model: branch Hamiltonians, transition frequencies, and the
closed-form decoupling-sequence coherence.

Each nuclear spin precesses about an electron-branch-dependent axis:

    m_s =  0:  H = wL * Iz
    m_s = -1:  H = (wL + a_par) * Iz + a_perp * Ix
    m_s = +1:  H = (wL - a_par) * Iz - a_perp * Ix

with wL the nuclear Larmor frequency (kHz) and (a_par, a_perp) the hyperfine
components.  The electron qubit uses the {0, -1} pair; the +1 branch only
appears through relaxation jumps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import IX, IZ, axis_angle, fold_rotation, propagator

BRANCHES = (0, -1, +1)


@dataclass(frozen=True)
class HyperfineParams:
    """Parallel and transverse hyperfine components in kHz."""

    a_par: float
    a_perp: float

    def __post_init__(self):
        if self.a_perp < 0:
            raise ValueError("a_perp is a magnitude and must be >= 0")


@dataclass(frozen=True)
class NvSystem:
    """Static field plus the hyperfine parameters of the two nuclear spins."""

    b_field: float  # G
    gamma: float  # kHz/G
    spins: tuple[HyperfineParams, HyperfineParams]
    t1_electron: float = 2.5  # ms

    def __post_init__(self):
        if self.b_field <= 0 or self.gamma <= 0:
            raise ValueError("field and gyromagnetic ratio must be positive")
        if self.t1_electron <= 0:
            raise ValueError("t1_electron must be positive")

    @property
    def omega_larmor(self) -> float:
        """Nuclear Larmor frequency in kHz."""
        return self.gamma * self.b_field

    def spin(self, index: int) -> HyperfineParams:
        """Hyperfine parameters for spin index 1 or 2."""
        if index not in (1, 2):
            raise ValueError("spin index must be 1 or 2")
        return self.spins[index - 1]

    def branch_hamiltonian(self, ms: int, spin: int) -> np.ndarray:
        """2x2 nuclear Hamiltonian for electron branch ms in {0, -1, +1}."""
        hf = self.spin(spin)
        wl = self.omega_larmor
        if ms == 0:
            return wl * IZ
        if ms == -1:
            return (wl + hf.a_par) * IZ + hf.a_perp * IX
        if ms == +1:
            return (wl - hf.a_par) * IZ - hf.a_perp * IX
        raise ValueError(f"invalid electron branch {ms}")

    def branch_frequency(self, ms: int, spin: int) -> float:
        """Precession frequency (level splitting) of the branch in kHz."""
        hf = self.spin(spin)
        wl = self.omega_larmor
        if ms == 0:
            return wl
        return float(np.hypot(wl - ms * hf.a_par, hf.a_perp))

    def odmr_frequencies(self, spin: int) -> dict[int, float]:
        """Nuclear transition frequency per electron branch."""
        return {ms: self.branch_frequency(ms, spin) for ms in BRANCHES}

    def resonance_tau_seed(self, spin: int, k: int) -> float:
        """Analytic seed (in us) for the k-th anti-aligned resonance of the
        pulse spacing, tau ~ (2k - 1) / (2 (2 wL + a_par))."""
        if k < 1:
            raise ValueError("resonance order k must be >= 1")
        denom = 2 * self.omega_larmor + self.spin(spin).a_par
        if denom <= 0:
            raise ValueError("resonance seed undefined for 2 wL + a_par <= 0")
        return 1000.0 * (2 * k - 1) / (2 * denom)

    def approx_regime_ok(self, spin: int) -> bool:
        """Weak-coupling condition for the resonant small-angle approximation."""
        hf = self.spin(spin)
        return self.omega_larmor >= 5 * max(abs(hf.a_par), hf.a_perp)


def invert_odmr(w0: float, wm1: float, wp1: float) -> HyperfineParams:
    """Recover (a_par, a_perp) from the three branch frequencies.

    Uses w_{-1}^2 - w_{+1}^2 = 4 wL a_par and then the -1 branch splitting.
    """
    a_par = (wm1**2 - wp1**2) / (4 * w0)
    arg = wm1**2 - (w0 + a_par) ** 2
    if arg < 0:
        if arg < -1e-6 * wm1**2:
            raise ValueError("inconsistent branch frequencies")
        arg = 0.0
    return HyperfineParams(a_par=a_par, a_perp=float(np.sqrt(arg)))


def unit_propagators(sys: NvSystem, spin: int, tau_us: float):
    """Nuclear propagators of one tau - pi - 2tau - pi - tau decoupling unit.

    Returns (V0, V1): the 2x2 rotations seen by the nuclear spin when the
    electron enters the unit in branch 0 or branch -1.  The two pi pulses
    return the electron to its entry branch.
    """
    t = tau_us / 1000.0
    u0a = propagator(sys.branch_hamiltonian(0, spin), t)
    u1a = propagator(sys.branch_hamiltonian(-1, spin), t)
    u0b = propagator(sys.branch_hamiltonian(0, spin), 2 * t)
    u1b = propagator(sys.branch_hamiltonian(-1, spin), 2 * t)
    v0 = u0a @ u1b @ u0a
    v1 = u1a @ u0b @ u1a
    return v0, v1


def unit_axes(sys: NvSystem, spin: int, tau_us: float):
    """Folded rotation axes and angles of the unit for both entry branches.

    Returns ((n0, a0), (n1, a1)) with angles in [0, pi]; the axis dot product
    n0 . n1 reaches -1 exactly at the conditional-gate resonances.
    """
    v0, v1 = unit_propagators(sys, spin, tau_us)
    n0, a0 = fold_rotation(*axis_angle(v0))
    n1, a1 = fold_rotation(*axis_angle(v1))
    return (n0, a0), (n1, a1)


def axis_dot(sys: NvSystem, spin: int, tau_us: float) -> float:
    """n0 . n1 of the folded unit axes; -1 means perfectly anti-aligned."""
    (n0, _), (n1, _) = unit_axes(sys, spin, tau_us)
    return float(n0 @ n1)


def pulse_angle(sys: NvSystem, spin: int, tau_us: float) -> float:
    """Per-pi-pulse conditional rotation angle (half the folded unit angle)."""
    (_, a0), _ = unit_axes(sys, spin, tau_us)
    return a0 / 2.0


def analytic_coherence(sys: NvSystem, spin: int, tau_us: float, n_pulses: int) -> float:
    """Electron coherence P = (<sigma_x> + 1)/2 after an n_pulses decoupling
    train with spacing 2*tau, for an unpolarized nuclear spin.

    Closed form: M = 1 - (1 - n0.n1) sin^2(n_pulses * theta_p / 2) with
    theta_p the per-pulse angle.  Exact for even pulse numbers, where the
    sequence is a whole number of units.
    """
    if n_pulses < 2 or n_pulses % 2:
        raise ValueError("closed form requires an even pulse count >= 2")
    (n0, a0), (n1, _) = unit_axes(sys, spin, tau_us)
    d = float(n0 @ n1)
    theta_p = a0 / 2.0
    m = 1 - (1 - d) * np.sin(n_pulses * theta_p / 2.0) ** 2
    return (1 + m) / 2


def resonant_coherence_approx(sys: NvSystem, spin: int, n_pulses: int) -> float:
    """Weak-coupling on-resonance approximation P ~ (cos(N a_perp/w1) + 1)/2."""
    hf = sys.spin(spin)
    w1 = sys.branch_frequency(-1, spin)
    mx = hf.a_perp / w1
    return float((np.cos(n_pulses * mx) + 1) / 2)


def register_hamiltonian(sys: NvSystem, ms: int) -> np.ndarray:
    """4x4 joint Hamiltonian of both nuclear spins for one electron branch."""
    h1 = sys.branch_hamiltonian(ms, 1)
    h2 = sys.branch_hamiltonian(ms, 2)
    return np.kron(h1, np.eye(2)) + np.kron(np.eye(2), h2)


def full_hamiltonian(sys: NvSystem) -> np.ndarray:
    """8x8 register Hamiltonian; electron |0> -> branch 0, |1> -> branch -1."""
    p0 = np.diag([1.0, 0.0]).astype(complex)
    p1 = np.diag([0.0, 1.0]).astype(complex)
    return np.kron(p0, register_hamiltonian(sys, 0)) + np.kron(
        p1, register_hamiltonian(sys, -1)
    )


def system_from_config(cfg: dict) -> NvSystem:
    """Build an NvSystem from a flat config mapping."""
    return NvSystem(
        b_field=cfg["system.b_field_gauss"],
        gamma=cfg["system.gamma_c13_khz_per_gauss"],
        spins=(
            HyperfineParams(cfg["system.a_par_1_khz"], cfg["system.a_perp_1_khz"]),
            HyperfineParams(cfg["system.a_par_2_khz"], cfg["system.a_perp_2_khz"]),
        ),
        t1_electron=cfg["system.t1_electron_ms"],
    )

"""Stochastic environment: quasi-static field offsets, Lorentzian-spectrum
collective rf noise, electron relaxation jumps, and the trajectory-averaged
nuclear storage channel.

All randomness is drawn from per-purpose ``numpy`` Generators keyed by
(seed, trajectory index, channel tag), so ensemble averages are bit-identical
regardless of evaluation order.

The storage channel evolves only the two nuclear spins, in the frame
rotating at the Larmor frequency for both: the electron enters through its
branch label, which offsets each spin's detuning by +-a_par.  The injected
rf drive couples the two spins identically (a collective operator by
construction), so with the electron resting in m_s = 0 the singlet is exact
dark state of every realization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import IX, IY, kron
from .system import NvSystem

# rng channel tags: one stream per independent noise source per trajectory
_TAG_FIELD = 0
_TAG_JUMPS = 1
_TAG_RF = 2
_TAG_UNITARY = 3


@dataclass(frozen=True)
class StaticFieldNoise:
    """Gaussian quasi-static field offset, resampled per repetition."""

    sigma_b: float  # G
    gamma_c13: float  # kHz/G

    def __post_init__(self):
        if self.sigma_b < 0:
            raise ValueError("sigma_b must be >= 0")
        if self.gamma_c13 <= 0:
            raise ValueError("gamma_c13 must be positive")


@dataclass(frozen=True)
class RfNoiseSpec:
    """Discrete-spectrum rf noise with Lorentzian weights.

    Component n at frequency n * delta_omega carries the amplitude
    sqrt(2 delta_omega R / ((2 pi n delta_omega)^2 + R^2)), which makes
    the ensemble autocorrelation of the summed envelope approach
    exp(-R |tau|) as the spacing shrinks.
    """

    correlation_rate: float  # R, 1/ms
    bandwidth: float = 10.0  # kHz
    delta_omega: float = 1.0  # kHz
    amplitude_scale: float = 1.0

    def __post_init__(self):
        if not self.bandwidth >= self.delta_omega > 0:
            raise ValueError("need bandwidth >= delta_omega > 0")
        if self.correlation_rate <= 0:
            raise ValueError("correlation rate must be positive")
        if self.amplitude_scale < 0:
            raise ValueError("amplitude_scale must be >= 0")

    @property
    def harmonics(self) -> np.ndarray:
        n_max = int(np.floor(self.bandwidth / self.delta_omega + 1e-9))
        return np.arange(-n_max, n_max + 1)

    @property
    def weights(self) -> np.ndarray:
        w = 2 * np.pi * self.harmonics * self.delta_omega
        return self.amplitude_scale * np.sqrt(
            2 * self.delta_omega * self.correlation_rate
            / (w**2 + self.correlation_rate**2)
        )


@dataclass(frozen=True)
class T1Process:
    """Markov relaxation of the electron branch, escape rate 1/t1."""

    t1: float  # ms
    initial_branch: int = 0

    def __post_init__(self):
        if not self.t1 > 0:
            raise ValueError("t1 must be positive (use t1=inf to disable)")
        if self.initial_branch not in (0, -1, +1):
            raise ValueError("initial branch must be one of 0, -1, +1")


def _rng(seed, *tags: int) -> np.random.Generator:
    if isinstance(seed, (int, np.integer)):
        key = [int(seed), *tags]
    else:
        key = [*(int(s) for s in seed), *tags]
    return np.random.default_rng(key)


def sample_static_field(noise: StaticFieldNoise, seed) -> float:
    """One Gaussian Larmor offset in kHz (identical for both spins)."""
    return float(
        _rng(seed, _TAG_FIELD).normal(0.0, noise.sigma_b * noise.gamma_c13)
    )


def synth_rf_noise(
    spec: RfNoiseSpec, duration_us: float, seed, dt_us: float = 0.5
) -> tuple[np.ndarray, np.ndarray]:
    """Sampled complex baseband envelope of one rf noise realization.

    Returns (times_us, omega) where omega[k] is the envelope at times[k];
    the realization is the weighted harmonic sum with independent uniform
    phases per component, deterministic given the seed.
    """
    if duration_us <= 0:
        raise ValueError("duration must be positive")
    if dt_us > 1.0 / (20 * spec.bandwidth) * 1e3:
        raise ValueError("dt too coarse to resolve the noise bandwidth")
    times_us = np.arange(0.0, duration_us + dt_us / 2, dt_us)
    phases = _rng(seed, _TAG_RF).uniform(0.0, 2 * np.pi, spec.harmonics.size)
    # t in ms against kHz frequencies
    arg = (
        2 * np.pi * np.outer(times_us / 1e3, spec.harmonics * spec.delta_omega)
        + phases
    )
    omega = np.exp(1j * arg) @ spec.weights.astype(complex)
    return times_us, omega


def t1_trajectory(proc: T1Process, duration_ms: float, seed) -> list[tuple[float, int]]:
    """Jump record [(time_ms, new_branch), ...] over [0, duration]."""
    if duration_ms < 0:
        raise ValueError("duration must be >= 0")
    if not np.isfinite(proc.t1):
        return []
    rng = _rng(seed, _TAG_JUMPS)
    jumps: list[tuple[float, int]] = []
    t, branch = 0.0, proc.initial_branch
    while True:
        t += rng.exponential(proc.t1)
        if t >= duration_ms:
            return jumps
        branch = [b for b in (0, -1, +1) if b != branch][rng.integers(2)]
        jumps.append((t, branch))


def random_collective_unitary(seed) -> np.ndarray:
    """Haar-random single-spin unitary applied to both spins: u (x) u."""
    rng = _rng(seed, _TAG_UNITARY)
    z = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    q, r = np.linalg.qr(z)
    u = q * (np.diag(r) / np.abs(np.diag(r)))
    return kron(u, u)


def collective_drive(omega_x: float, omega_y: float) -> np.ndarray:
    """Drive operator Ox (Ix1+Ix2) + Oy (Iy1+Iy2) on the nuclear pair."""
    h1 = omega_x * IX + omega_y * IY
    eye = np.eye(2)
    return kron(h1, eye) + kron(eye, h1)


def _branch_occupancy(
    jumps: list[tuple[float, int]], start: int, ta: float, tb: float
) -> list[tuple[float, int]]:
    """(duration_ms, branch) segments covering [ta, tb]."""
    segs = []
    t, branch = ta, start
    for tj, bj in jumps:
        if tj <= ta:
            branch = bj
            continue
        if tj >= tb:
            break
        segs.append((tj - t, branch))
        t, branch = tj, bj
    segs.append((tb - t, branch))
    return segs


def _branch_at(jumps: list[tuple[float, int]], start: int, t: float) -> int:
    branch = start
    for tj, bj in jumps:
        if tj > t:
            break
        branch = bj
    return branch


def _detunings(sys: NvSystem, branch: int) -> tuple[float, float]:
    """Per-spin z detuning (kHz) in the collective rotating frame."""
    if branch == 0:
        return 0.0, 0.0
    sign = 1.0 if branch == -1 else -1.0
    return sign * sys.spin(1).a_par, sign * sys.spin(2).a_par


def _diag_free(
    sys: NvSystem, delta: float, segs: list[tuple[float, int]]
) -> np.ndarray:
    """Exact diagonal propagator for a drive-free interval with jumps."""
    th1 = th2 = 0.0
    for dt, branch in segs:
        d1, d2 = _detunings(sys, branch)
        th1 += 2 * np.pi * (delta + d1) * dt
        th2 += 2 * np.pi * (delta + d2) * dt
    p1 = np.exp(-0.5j * th1 * np.array([1.0, -1.0]))
    p2 = np.exp(-0.5j * th2 * np.array([1.0, -1.0]))
    return np.kron(p1, p2)  # diagonal entries of u1 (x) u2


def _step_unitaries(
    phases_half: np.ndarray, nx: np.ndarray, ny: np.ndarray, nz: np.ndarray
) -> np.ndarray:
    """Batched 2x2 exp(-i phase (n . sigma)) for unit axes n."""
    c = np.cos(phases_half)
    s = np.sin(phases_half)
    u = np.empty(phases_half.shape + (2, 2), dtype=complex)
    u[..., 0, 0] = c - 1j * s * nz
    u[..., 1, 1] = c + 1j * s * nz
    u[..., 0, 1] = -1j * s * (nx - 1j * ny)
    u[..., 1, 0] = -1j * s * (nx + 1j * ny)
    return u


def storage_channel(
    rho0: np.ndarray,
    t_ms: float,
    sys: NvSystem,
    *,
    static: StaticFieldNoise | None = None,
    rf: RfNoiseSpec | None = None,
    t1: T1Process | None = None,
    n_traj: int = 1,
    seed=0,
    dt_us: float = 0.5,
    gate_on_us: float = 5.0,
    gate_off_us: float = 5.0,
) -> np.ndarray:
    """Trajectory-averaged nuclear state after storing rho0 for t_ms.

    Each trajectory draws its own field offset, rf realization (gated on
    gate_on_us after the start and off gate_off_us before the end) and
    electron jump record, then evolves exactly: drive-free intervals use
    closed-form diagonal propagators split at the jump times, rf intervals
    use piecewise-constant steps of dt_us.  The average is a convex
    combination of unitary conjugations, so the output is a density matrix
    by construction.
    """
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    if t_ms < 0:
        raise ValueError("storage time must be >= 0")
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (4, 4):
        raise ValueError("rho0 must be a 4x4 nuclear density matrix")
    if t_ms == 0.0:
        return rho0.copy()

    t_on = gate_on_us / 1e3
    t_off = max(t_ms - gate_off_us / 1e3, t_on)
    rf_active = rf is not None and rf.amplitude_scale > 0 and t_off > t_on
    start = t1.initial_branch if t1 else 0

    deltas = np.array([
        sample_static_field(static, [seed, k]) if static else 0.0
        for k in range(n_traj)
    ])
    jump_recs = [
        t1_trajectory(t1, t_ms, [seed, k]) if t1 else [] for k in range(n_traj)
    ]

    if not rf_active:
        # every trajectory is an exact diagonal conjugation
        out = np.zeros((4, 4), dtype=complex)
        for k in range(n_traj):
            diag = _diag_free(
                sys, deltas[k], _branch_occupancy(jump_recs[k], start, 0.0, t_ms)
            )
            out += (diag[:, None] * rho0) * diag.conj()[None, :]
        return out / n_traj

    n_steps = max(int(round((t_off - t_on) / (dt_us / 1e3))), 1)
    step = (t_off - t_on) / n_steps
    a12 = np.array([_detunings(sys, b) for b in (0, -1, +1)])  # branch rows

    out = np.zeros((4, 4), dtype=complex)
    for lo in range(0, n_traj, 128):
        ks = range(lo, min(lo + 128, n_traj))
        c = len(ks)
        dz = np.empty((2, c, n_steps))
        ox = np.empty((c, n_steps))
        oy = np.empty((c, n_steps))
        u = np.zeros((c, 4, 4), dtype=complex)
        tail = np.empty((c, 4), dtype=complex)
        for j, k in enumerate(ks):
            _, omega = synth_rf_noise(rf, (t_off - t_on) * 1e3, [seed, k], dt_us)
            ox[j] = np.real(omega[:n_steps])
            oy[j] = np.imag(omega[:n_steps])
            mids = t_on + (np.arange(n_steps) + 0.5) * step
            rows = np.select(
                [np.array([_branch_at(jump_recs[k], start, t) for t in mids]) == b
                 for b in (0, -1)],
                [0, 1], default=2,
            )
            dz[:, j, :] = deltas[k] + a12[rows].T
            head = _diag_free(
                sys, deltas[k], _branch_occupancy(jump_recs[k], start, 0.0, t_on)
            )
            u[j] = np.diag(head)
            tail[j] = _diag_free(
                sys, deltas[k], _branch_occupancy(jump_recs[k], start, t_off, t_ms)
            )
        for s in range(n_steps):
            u12 = []
            for i in (0, 1):
                norm = np.maximum(
                    np.sqrt(ox[:, s] ** 2 + oy[:, s] ** 2 + dz[i, :, s] ** 2),
                    1e-300,
                )
                u12.append(_step_unitaries(
                    np.pi * norm * step,
                    ox[:, s] / norm, oy[:, s] / norm, dz[i, :, s] / norm,
                ))
            u4 = np.einsum("tab,tcd->tacbd", u12[0], u12[1]).reshape(c, 4, 4)
            u = u4 @ u
        u = tail[:, :, None] * u
        out += np.einsum("tij,jk,tlk->il", u, rho0, u.conj())
    return out / n_traj

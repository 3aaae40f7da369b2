"""Scripted experiment scenarios and the shared curve-fitting helpers.

Each runner simulates one of the hardware measurement sequences end to
end — transition-frequency scans, gate-repetition decay, entangled-state
preparation, and storage under injected collective noise — and extracts
its reported constant with a deterministic nonlinear fit.  All runners are
reproducible given (parameters, seed).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

from .core import (
    dm,
    equatorial_rotation,
    singlet,
    state_fidelity,
    tensor_embed,
    triplet,
)
from .noise import (
    RfNoiseSpec,
    StaticFieldNoise,
    T1Process,
    sample_static_field,
    storage_channel,
)
from .pulses import (
    PulseSequence,
    _gate_frames,
    circuit_gates,
    entanglement_circuit,
    sequence_propagator,
)
from .readout import InitPopulations, apply_init_error
from .system import NvSystem, invert_odmr
from .tomography import mle_reconstruct, records_from_state

STATE_PHI = {"S": np.pi, "T": 0.0}
NOISE_MODES = ("dephasing-only", "general-collective")


class ExperimentError(RuntimeError):
    """A scenario precondition failed (bad grid, missing resonance, ...)."""


class FitError(RuntimeError):
    """The nonlinear fit did not produce a usable parameter set."""


# ---------------------------------------------------------------------------
# curve fitting


@dataclass(frozen=True)
class DecayFit:
    """Fitted model parameters with Jacobian-based standard deviations."""

    model: str
    params: dict[str, float]
    stds: dict[str, float]
    residual: float

    def __getattr__(self, name):
        try:
            return self.params[name.replace("_", "-")]
        except KeyError:
            raise AttributeError(name) from None


def _exp_with_floor(t, floor, f0, t_est):
    return floor + (f0 - floor) * np.exp(-t / t_est)


def _gaussian_peak(x, baseline, amplitude, center, width):
    return baseline + amplitude * np.exp(-((x - center) ** 2) / (2 * width**2))


def _sinusoid_envelope(n, amplitude, b):
    return amplitude * np.sin(2 * np.pi * n / 4) * (1 - b * n)


_MODELS = {
    "exp-with-floor": (_exp_with_floor, ("floor", "f0", "t-est")),
    "gaussian-peak": (_gaussian_peak, ("baseline", "amplitude", "center", "width")),
    "sinusoid-linear-envelope": (_sinusoid_envelope, ("amplitude", "b")),
}


def _initial_guess(model: str, x: np.ndarray, y: np.ndarray) -> list[float]:
    """Deterministic starting point for each fit model."""
    if model == "exp-with-floor":
        floor = float(y.min())
        amp = float(y.max() - y.min())
        mask = y > floor + 0.05 * max(amp, 1e-12)
        t_est = (x.max() - x.min()) / 2 or 1.0
        if mask.sum() > 1 and amp > 0:
            z = np.log((y[mask] - floor) / amp + 1e-12)
            slope = np.polyfit(x[mask], z, 1)[0]
            if slope < 0:
                t_est = -1.0 / slope
        return [floor, floor + amp, t_est]
    if model == "gaussian-peak":
        base = float(y.min())
        return [
            base,
            float(y.max() - base),
            float(x[np.argmax(y)]),
            float((x.max() - x.min()) / 6 or 1.0),
        ]
    peak = np.abs(np.sin(2 * np.pi * x / 4)) > 0.5
    amp = float(np.max(np.abs(y[peak])) if peak.any() else np.max(np.abs(y)))
    sign = np.sign(np.sum(y * np.sin(2 * np.pi * x / 4))) or 1.0
    return [sign * amp, 0.0]


def fit_decay(x, y, model: str = "exp-with-floor") -> DecayFit:
    """Deterministic least-squares fit of one of the three decay models.

    Models: 'exp-with-floor' F(t) = floor + (f0 - floor) exp(-t/t_est);
    'gaussian-peak' baseline + amplitude exp(-(x-center)^2 / 2 width^2);
    'sinusoid-linear-envelope' amplitude sin(2 pi n/4)(1 - b n).
    Standard deviations come from the fit Jacobian.
    """
    if model not in _MODELS:
        raise FitError(f"unknown fit model {model!r}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 4:
        raise FitError("need at least 4 (x, y) points")
    func, names = _MODELS[model]
    try:
        popt, pcov = curve_fit(
            func, x, y, p0=_initial_guess(model, x, y), maxfev=20_000
        )
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"{model} fit failed: {exc}") from exc
    if not np.all(np.isfinite(popt)):
        raise FitError(f"{model} fit diverged")
    stds = np.sqrt(np.abs(np.diag(pcov))) if np.all(np.isfinite(pcov)) else (
        np.full(len(names), np.inf)
    )
    residual = float(np.sqrt(np.mean((func(x, *popt) - y) ** 2)))
    return DecayFit(
        model=model,
        params=dict(zip(names, (float(v) for v in popt))),
        stds=dict(zip(names, (float(s) for s in stds))),
        residual=residual,
    )


# ---------------------------------------------------------------------------
# transition-frequency scan


@dataclass(frozen=True)
class OdmrScan:
    """One simulated frequency scan with its fitted line center."""

    spin: int
    branch: int
    freqs_khz: np.ndarray
    signal: np.ndarray
    fit: DecayFit

    @property
    def center_khz(self) -> float:
        return self.fit.params["center"]


def run_odmr_scan(
    sys: NvSystem,
    spin: int,
    branch: int,
    *,
    freqs_khz: np.ndarray | None = None,
    shots: int = 10**6,
    seed: int = 0,
    pulse_us: float = 600.0,
) -> OdmrScan:
    """Scan an rf pulse across a nuclear transition and fit the line center.

    The sequence mirrors the hardware calibration: polarize the nuclear
    spin, park the electron in the requested branch, apply a fixed-duration
    rf pulse (a pi pulse on resonance) at the scanned frequency, and swap
    the spin-flip probability back onto the electron for readout.  The
    resulting two-level lineshape is sampled with shot noise and its
    central lobe fitted with a Gaussian.
    """
    if shots < 1:
        raise ExperimentError("shots must be >= 1")
    f_true = sys.branch_frequency(branch, spin)
    if freqs_khz is None:
        freqs_khz = f_true + np.arange(-3.0, 3.0001, 0.2)
    freqs_khz = np.asarray(freqs_khz, dtype=float)
    if freqs_khz.size < 8 or np.any(np.diff(freqs_khz) <= 0):
        raise ExperimentError("scan grid must be increasing with >= 8 points")

    t_ms = pulse_us / 1e3
    rabi = 1.0 / (2 * t_ms)  # pi rotation on resonance in pulse_us
    detuning = freqs_khz - f_true
    w = np.hypot(rabi, detuning)
    p_flip = (rabi / w) ** 2 * np.sin(np.pi * w * t_ms) ** 2

    rng = np.random.default_rng([seed, spin, branch & 0xF])
    signal = rng.binomial(shots, p_flip) / shots

    peak = freqs_khz[np.argmax(signal)]
    if peak <= freqs_khz[0] or peak >= freqs_khz[-1]:
        raise ExperimentError("scan grid does not bracket the resonance")
    # fit only the central lobe: between the first zeros of the lineshape
    lobe = np.sqrt(max((1.0 / t_ms) ** 2 - rabi**2, rabi**2))
    mask = np.abs(freqs_khz - peak) <= lobe
    fit = fit_decay(freqs_khz[mask], signal[mask], "gaussian-peak")
    return OdmrScan(spin, branch, freqs_khz, signal, fit)


def odmr_calibration(
    sys: NvSystem, spin: int, *, shots: int = 10**6, seed: int = 0
) -> tuple[float, float]:
    """Recover (a_par, a_perp) by scanning all three electron branches."""
    centers = {
        ms: run_odmr_scan(sys, spin, ms, shots=shots, seed=seed).center_khz
        for ms in (0, -1, +1)
    }
    hf = invert_odmr(centers[0], centers[-1], centers[+1])
    return hf.a_par, hf.a_perp


# ---------------------------------------------------------------------------
# gate-repetition decay


@dataclass(frozen=True)
class GateRepetition:
    """Y expectation of the target spin versus gate repetition count."""

    spin: int
    branch: int
    ns: np.ndarray
    ys: np.ndarray
    fit: DecayFit


def run_gate_repetition(
    sys: NvSystem,
    spin: int = 1,
    branch: int = 0,
    *,
    n_max: int = 10,
    jitter_sigma_g: float = 0.0,
    t1_ms: float = np.inf,
    n_traj: int = 1,
    seed: int = 0,
    resonance_order: int = 3,
) -> GateRepetition:
    """Apply the spin's conditional gate N = 1..n_max times and fit the
    oscillation envelope A sin(2 pi N / 4)(1 - b N).

    The target spin starts polarized and is read along the tracked-frame Y
    axis (the equatorial axis perpendicular to the gate's rotation axis).
    Optional per-trajectory field offsets detune the gate, and electron
    relaxation truncates the conditional evolution: trajectories whose
    first jump lands inside the sequence contribute no coherent signal.
    """
    if branch not in (0, -1):
        raise ExperimentError("electron branch must be 0 or -1")
    if n_traj < 1 or n_max < 4:
        raise ExperimentError("need n_traj >= 1 and n_max >= 4")
    gates = circuit_gates(sys, resonance_order)
    gate = gates.cond1 if spin == 1 else gates.cond2
    a0 = _gate_frames(sys, gate)[0]
    axis = equatorial_rotation(a0 + np.pi / 2, np.pi)  # pauli at that azimuth
    meas = tensor_embed(1j * axis, spin)
    rho_idx = 0 if branch == 0 else 4  # |branch, up, up>
    block_ms = gate.duration_us / 1e3

    jitter = (
        StaticFieldNoise(jitter_sigma_g, sys.gamma) if jitter_sigma_g > 0 else None
    )
    ns = np.arange(1, n_max + 1)
    ys = np.zeros(n_max)
    for k in range(n_traj):
        run_sys = sys
        if jitter is not None:
            delta = sample_static_field(jitter, [seed, k])
            run_sys = dataclasses.replace(
                sys, b_field=sys.b_field + delta / sys.gamma
            )
        u_gate = sequence_propagator(gate.sequence(), run_sys).unitary
        rng = np.random.default_rng([seed, k, 0xD])
        psi = np.zeros(8, dtype=complex)
        psi[rho_idx] = 1.0
        for i, n in enumerate(ns):
            psi = u_gate @ psi
            if np.isfinite(t1_ms) and rng.exponential(t1_ms) < n * block_ms:
                continue  # relaxation scrambled this repetition block
            ys[i] += float(np.real(psi.conj() @ (meas @ psi)))
    ys /= n_traj
    fit = fit_decay(ns, ys, "sinusoid-linear-envelope")
    return GateRepetition(spin, branch, ns, ys, fit)


# ---------------------------------------------------------------------------
# entangled-state preparation under field jitter


def run_entanglement_jitter(
    sys: NvSystem,
    phi: float = np.pi,
    *,
    sigma_g: float = 0.15,
    n_traj: int = 1000,
    seed: int = 0,
    target: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean preparation fidelity with a Gaussian field offset per trajectory.

    Each trajectory draws a static field offset, propagates the compiled
    sequence under the shifted field, and scores against the ideal target
    (singlet for phi = pi).  Returns (mean fidelity, per-trajectory
    fidelities).
    """
    if target is None:
        target = dm(singlet() if abs(phi - np.pi) < 1e-9 else triplet())
    jitter = StaticFieldNoise(sigma_g, sys.gamma)
    fids = np.empty(n_traj)
    for k in range(n_traj):
        delta = sample_static_field(jitter, [seed, k])
        shifted = dataclasses.replace(sys, b_field=sys.b_field + delta / sys.gamma)
        res = entanglement_circuit(sys, phi, sim_system=shifted)
        fids[k] = state_fidelity(target, res.rho_nuclear)
    return float(fids.mean()), fids


# ---------------------------------------------------------------------------
# storage


@dataclass(frozen=True)
class StorageResult:
    """Fidelity-versus-time curve for one stored state, with its decay fit."""

    state: str
    noise_mode: str
    times_ms: np.ndarray
    fidelities: np.ndarray
    std_errs: np.ndarray
    fit: DecayFit | None
    fit_error: str | None = None

    @property
    def t_est_ms(self) -> float:
        if self.fit is None:
            raise FitError(self.fit_error or "no fit available")
        return self.fit.params["t-est"]

    @property
    def floor(self) -> float:
        if self.fit is None:
            raise FitError(self.fit_error or "no fit available")
        return self.fit.params["floor"]


def default_time_grid(t_max_ms: float = 4.0, n_times: int = 8) -> np.ndarray:
    """Log-spaced storage times from 50 us to t_max."""
    return np.geomspace(0.05, t_max_ms, n_times)


def prepare_stored_state(
    sys: NvSystem,
    state: str,
    *,
    prep: str = "compiled",
    init_populations: InitPopulations | None = None,
    scenario: str = "no-memory",
) -> np.ndarray:
    """Nuclear density matrix entering storage: circuit output plus the
    init/readout imperfection channel (uncorrected-fidelity convention)."""
    if state not in STATE_PHI:
        raise ExperimentError("state must be 'S' or 'T'")
    if prep == "exact":
        rho = dm(singlet() if state == "S" else triplet())
    else:
        rho = entanglement_circuit(
            sys, STATE_PHI[state], ideal=(prep == "ideal")
        ).rho_nuclear
    if init_populations is not None:
        rho = apply_init_error(rho, init_populations, scenario)
    return rho


def run_storage_experiment(
    sys: NvSystem,
    state: str = "S",
    noise_mode: str = "general-collective",
    times_ms: np.ndarray | None = None,
    *,
    n_traj: int = 200,
    seed: int = 0,
    rf: RfNoiseSpec | None = None,
    static: StaticFieldNoise | None = None,
    t1: T1Process | None = None,
    init_populations: InitPopulations | None = None,
    scenario: str = "no-memory",
    prep: str = "compiled",
    shots: int | None = None,
    dt_us: float = 0.5,
    gate_on_us: float = 5.0,
    gate_off_us: float = 5.0,
    n_batches: int = 4,
) -> StorageResult:
    """Store the prepared entangled state and fit its fidelity decay.

    noise_mode 'dephasing-only' drops the rf drive (pass static/t1 to
    control the rest); 'general-collective' requires an rf spec.  Fidelity
    is evaluated from exact expectations by default; passing ``shots``
    routes each time point through sampled tomography and maximum-
    likelihood reconstruction instead.  Trajectories are split into
    ``n_batches`` sub-ensembles to estimate the standard error per point.
    """
    if noise_mode not in NOISE_MODES:
        raise ExperimentError(f"noise_mode must be one of {NOISE_MODES}")
    if noise_mode == "dephasing-only":
        rf = None
    elif rf is None:
        raise ExperimentError("general-collective storage needs an rf spec")
    times_ms = default_time_grid() if times_ms is None else np.asarray(times_ms)
    if np.any(np.diff(times_ms) <= 0):
        raise ExperimentError("time grid must be strictly increasing")
    if n_traj < n_batches:
        n_batches = 1

    rho0 = prepare_stored_state(
        sys, state, prep=prep,
        init_populations=init_populations, scenario=scenario,
    )
    target = dm(singlet() if state == "S" else triplet())

    per_batch = n_traj // n_batches
    fids = np.empty(times_ms.size)
    errs = np.empty(times_ms.size)
    for i, t in enumerate(times_ms):
        batch_f = []
        for b in range(n_batches):
            rho_t = storage_channel(
                rho0, float(t), sys,
                static=static, rf=rf, t1=t1,
                n_traj=per_batch, seed=seed * n_batches + b,
                dt_us=dt_us, gate_on_us=gate_on_us, gate_off_us=gate_off_us,
            )
            if shots is None:
                batch_f.append(state_fidelity(target, rho_t))
            else:
                recs = records_from_state(rho_t, shots, seed * 1000 + 31 * i + b)
                rec = mle_reconstruct(recs)
                batch_f.append(state_fidelity(target, rec.rho))
        batch_f = np.array(batch_f)
        fids[i] = batch_f.mean()
        errs[i] = (
            batch_f.std(ddof=1) / np.sqrt(n_batches) if n_batches > 1 else 0.0
        )

    fit = None
    fit_error = None
    try:
        fit = fit_decay(times_ms, fids, "exp-with-floor")
    except FitError as exc:
        fit_error = str(exc)
    return StorageResult(
        state=state,
        noise_mode=noise_mode,
        times_ms=times_ms,
        fidelities=fids,
        std_errs=errs,
        fit=fit,
        fit_error=fit_error,
    )


# ---------------------------------------------------------------------------
# rf amplitude calibration


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of the storage-time bisection on the rf amplitude scale."""

    amplitude_scale: float
    t_est_ms: float
    evaluations: int
    converged: bool


def calibrate_noise(
    sys: NvSystem,
    rf: RfNoiseSpec,
    *,
    target_ms: tuple[float, float] = (0.300, 0.420),
    t1: T1Process | None = None,
    times_ms: np.ndarray | None = None,
    n_traj: int = 200,
    seed: int = 0,
    lo: float = 0.05,
    hi: float = 4.0,
    max_evals: int = 24,
) -> CalibrationResult:
    """Bisect the rf amplitude scale until the fitted storage time of the
    symmetric entangled state falls inside ``target_ms``.

    The probe stores an exactly prepared |T>-type state (the anti-symmetric
    state is dark under the collective drive, so it carries no signal) and
    fits the exponential-with-floor decay; the fitted time constant is
    monotone decreasing in the drive amplitude, which makes bisection
    reliable.  This is the single tuned parameter of the noise model.
    """
    times_ms = default_time_grid() if times_ms is None else np.asarray(times_ms)

    def t_est(scale: float) -> float:
        spec = dataclasses.replace(rf, amplitude_scale=scale)
        res = run_storage_experiment(
            sys, "T", "general-collective", times_ms,
            n_traj=n_traj, seed=seed, rf=spec, t1=t1, prep="exact",
        )
        return res.t_est_ms

    evals = 0
    value = t_est(rf.amplitude_scale)
    evals += 1
    scale = rf.amplitude_scale
    while not (target_ms[0] <= value <= target_ms[1]) and evals < max_evals:
        if value > target_ms[1]:
            lo = scale  # decays too slowly: more drive
        else:
            hi = scale
        scale = np.sqrt(lo * hi)
        value = t_est(scale)
        evals += 1
    return CalibrationResult(
        amplitude_scale=float(scale),
        t_est_ms=float(value),
        evaluations=evals,
        converged=bool(target_ms[0] <= value <= target_ms[1]),
    )

"""Two-qubit nuclear state tomography.

The measurement scheme is the 15-setting set (three single-spin bases per
spin plus the nine two-spin correlation bases).  Counts are sampled from
Born-rule probabilities; reconstruction maximizes the multinomial
likelihood over the Cholesky-parameterized manifold of physical states,
so the result is positive semidefinite with unit trace by construction.
Reported fidelities are uncorrected for initialization or detection
error, matching how the hardware numbers are quoted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .core import dm, kron, state_fidelity

_EYE2 = np.eye(2, dtype=complex)

# eigenprojectors (+1 then -1) for each single-spin basis
_PROJ = {
    "X": (0.5 * np.array([[1, 1], [1, 1]], dtype=complex),
          0.5 * np.array([[1, -1], [-1, 1]], dtype=complex)),
    "Y": (0.5 * np.array([[1, -1j], [1j, 1]], dtype=complex),
          0.5 * np.array([[1, 1j], [-1j, 1]], dtype=complex)),
    "Z": (np.diag([1.0, 0.0]).astype(complex),
          np.diag([0.0, 1.0]).astype(complex)),
}


@dataclass(frozen=True)
class MeasurementSetting:
    """One tomography basis choice: a Pauli label per spin, I = untouched."""

    b1: str
    b2: str

    def __post_init__(self):
        if self.b1 not in "XYZI" or self.b2 not in "XYZI":
            raise ValueError(f"unknown basis pair {self.b1}{self.b2}")
        if self.b1 == "I" and self.b2 == "I":
            raise ValueError("II is not a measurement setting")

    @property
    def name(self) -> str:
        return self.b1 + self.b2

    @property
    def kind(self) -> str:
        return "single-bit" if "I" in (self.b1, self.b2) else "correlation"

    @property
    def outcome_labels(self) -> tuple[str, ...]:
        return ("+", "-") if self.kind == "single-bit" else ("++", "+-", "-+", "--")

    def projectors(self) -> list[np.ndarray]:
        """Outcome projectors in the order of ``outcome_labels``."""
        if self.b1 == "I":
            return [kron(_EYE2, p) for p in _PROJ[self.b2]]
        if self.b2 == "I":
            return [kron(p, _EYE2) for p in _PROJ[self.b1]]
        return [
            kron(p1, p2) for p1 in _PROJ[self.b1] for p2 in _PROJ[self.b2]
        ]

    def outcome_signs(self) -> np.ndarray:
        """Pauli eigenvalue (product) per outcome, for expectation values."""
        if self.kind == "single-bit":
            return np.array([1.0, -1.0])
        return np.array([1.0, -1.0, -1.0, 1.0])


@dataclass(frozen=True)
class CountsRecord:
    """Outcome tallies for one setting, with seed provenance."""

    setting: MeasurementSetting
    shots: int
    tallies: tuple[int, ...]
    seed: int

    def __post_init__(self):
        if sum(self.tallies) != self.shots:
            raise ValueError("tallies must sum to shots")
        if len(self.tallies) != len(self.setting.outcome_labels):
            raise ValueError("one tally per outcome required")

    @property
    def expectation(self) -> float:
        """Empirical Pauli expectation value for this setting."""
        return float(
            self.setting.outcome_signs() @ np.asarray(self.tallies) / self.shots
        )


@dataclass(frozen=True)
class ReconstructionResult:
    """Maximum-likelihood state estimate and optimizer diagnostics."""

    rho: np.ndarray
    log_likelihood: float
    iterations: int
    converged: bool
    nll_trace: tuple[float, ...] = field(default=(), repr=False)


def measurement_settings() -> list[MeasurementSetting]:
    """The 15 settings in canonical order: 6 single-spin, 9 correlation."""
    singles = [MeasurementSetting(b, "I") for b in "XYZ"] + [
        MeasurementSetting("I", b) for b in "XYZ"
    ]
    pairs = [MeasurementSetting(b1, b2) for b1 in "XYZ" for b2 in "XYZ"]
    return singles + pairs


def setting_probabilities(rho: np.ndarray, setting: MeasurementSetting) -> np.ndarray:
    """Born-rule outcome probabilities, clipped and renormalized."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError("rho must be 4x4")
    p = np.array([np.trace(rho @ pi).real for pi in setting.projectors()])
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def expectation_value(rho: np.ndarray, setting: MeasurementSetting) -> float:
    """Exact Pauli expectation for the setting."""
    return float(setting.outcome_signs() @ setting_probabilities(rho, setting))


def simulate_counts(
    rho: np.ndarray, setting: MeasurementSetting, shots: int, seed
) -> CountsRecord:
    """Sampled tallies for one setting; deterministic given the seed."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    probs = setting_probabilities(rho, setting)
    rng = np.random.default_rng(seed)
    if setting.kind == "single-bit":
        k = int(rng.binomial(shots, probs[0]))
        tallies = (k, shots - k)
    else:
        tallies = tuple(int(n) for n in rng.multinomial(shots, probs))
    base = seed if isinstance(seed, (int, np.integer)) else seed[0]
    return CountsRecord(setting, shots, tallies, int(base))


def records_from_state(rho: np.ndarray, shots: int, seed: int) -> list[CountsRecord]:
    """All 15 settings sampled with per-setting derived seeds."""
    return [
        simulate_counts(rho, s, shots, [seed, i])
        for i, s in enumerate(measurement_settings())
    ]


def _build_t(params: np.ndarray) -> np.ndarray:
    t = np.zeros((4, 4), dtype=complex)
    t[np.diag_indices(4)] = params[:4]
    rows, cols = np.tril_indices(4, -1)
    t[rows, cols] = params[4:10] + 1j * params[10:16]
    return t


def _params_from_rho(rho: np.ndarray) -> np.ndarray:
    """Cholesky factor of a PSD-projected copy of rho, flattened."""
    w, v = np.linalg.eigh((rho + rho.conj().T) / 2)
    w = np.clip(w, 1e-6, None)
    rho_pd = (v * w) @ v.conj().T
    rho_pd /= np.trace(rho_pd).real
    # rho = T^dag T with T lower-triangular is the Cholesky factorization
    # of the index-reversed matrix, reversed back
    j = np.eye(4)[::-1]
    t = j @ np.linalg.cholesky(j @ rho_pd @ j).conj().T @ j
    params = np.empty(16)
    params[:4] = t[np.diag_indices(4)].real
    rows, cols = np.tril_indices(4, -1)
    params[4:10] = t[rows, cols].real
    params[10:16] = t[rows, cols].imag
    return params


def _linear_inversion(records: list[CountsRecord]) -> np.ndarray:
    """Direct Pauli-expectation estimate (possibly unphysical)."""
    pauli = {
        "I": _EYE2,
        "X": np.array([[0, 1], [1, 0]], dtype=complex),
        "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
        "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    }
    rho = np.eye(4, dtype=complex) / 4
    for rec in records:
        op = kron(pauli[rec.setting.b1], pauli[rec.setting.b2])
        rho += rec.expectation * op / 4
    return rho


def mle_reconstruct(
    records: list[CountsRecord], *, tol: float = 1e-10, max_iter: int = 10_000
) -> ReconstructionResult:
    """Maximum-likelihood density matrix from a full 15-setting record set.

    The state is parameterized as T(theta)^dag T(theta) / trace with T
    lower-triangular (16 real parameters), so every iterate is physical.
    Descent runs until the relative log-likelihood change drops below
    ``tol`` or ``max_iter`` iterations; non-convergence is flagged on the
    result rather than raised.
    """
    names = sorted(rec.setting.name for rec in records)
    expected = sorted(s.name for s in measurement_settings())
    if names != expected:
        missing = sorted(set(expected) - set(names))
        extra = sorted(set(names) - set(expected))
        raise ValueError(
            f"need each of the 15 settings exactly once "
            f"(missing {missing}, unexpected {extra})"
        )
    if any(rec.shots < 1 for rec in records):
        raise ValueError("shots must be positive")

    projectors = np.stack([
        pi for rec in records for pi in rec.setting.projectors()
    ])
    counts = np.array([
        n for rec in records for n in rec.tallies
    ], dtype=float)

    def nll_and_grad(params: np.ndarray) -> tuple[float, np.ndarray]:
        t = _build_t(params)
        a = t.conj().T @ t
        tau = np.trace(a).real
        rho = a / tau
        p = np.einsum("oab,ba->o", projectors, rho).real
        p = np.clip(p, 1e-12, None)
        nll = -float(counts @ np.log(p))
        m = np.einsum("o,oab->ab", counts / p, projectors)
        c = np.einsum("ab,ba->", m, rho).real
        g_a = (c * np.eye(4) - m) / tau
        k = g_a @ t.conj().T
        grad = np.empty(16)
        grad[:4] = 2 * k[np.diag_indices(4)].real
        rows, cols = np.tril_indices(4, -1)
        grad[4:10] = 2 * k[cols, rows].real
        grad[10:16] = -2 * k[cols, rows].imag
        return nll, grad

    trace: list[float] = []
    x0 = _params_from_rho(_linear_inversion(records))

    def callback(xk):
        trace.append(nll_and_grad(xk)[0])

    res = minimize(
        nll_and_grad, x0, jac=True, method="L-BFGS-B", callback=callback,
        options={"maxiter": max_iter, "ftol": tol, "gtol": 1e-12},
    )
    t = _build_t(res.x)
    a = t.conj().T @ t
    rho = a / np.trace(a).real
    return ReconstructionResult(
        rho=rho,
        log_likelihood=-float(res.fun),
        iterations=int(res.nit),
        converged=bool(res.success),
        nll_trace=tuple(trace),
    )


def fidelity_report(result: ReconstructionResult, target: np.ndarray) -> float:
    """Overlap of the reconstruction with a target state or state vector."""
    target = np.asarray(target, dtype=complex)
    if target.ndim == 1:
        target = dm(target)
    return state_fidelity(target, result.rho)


def counts_csv_rows(records: list[CountsRecord]) -> list[dict]:
    """Rows for the counts table: setting, outcome, count, shots, seed."""
    return [
        {
            "setting": rec.setting.name,
            "outcome": label,
            "count": tally,
            "shots": rec.shots,
            "seed": rec.seed,
        }
        for rec in records
        for label, tally in zip(rec.setting.outcome_labels, rec.tallies)
    ]


def result_json(result: ReconstructionResult) -> dict:
    """JSON payload: 16 row-major re/im pairs plus optimizer diagnostics."""
    return {
        "rho": [
            [float(z.real), float(z.imag)] for z in result.rho.reshape(-1)
        ],
        "log_likelihood": result.log_likelihood,
        "iterations": result.iterations,
        "converged": result.converged,
    }

"""Initialization/readout fidelity algebra for laser-pumped spin registers.

Green-laser pumping prepares the electron in a mixture of the desired
m_s = 0 state (weight p1), a fully mixed m_s = 0/-1 state (p2), the
m_s = +1 state (p3), and the neutral charge state (p4).  Nuclear-spin
initialization and readout each push this mixture through a
swap - electron-reset - swap chain; tracking the term weights through the
chain yields the maximum signal contrast and the init/readout fidelity
bound for two reset scenarios (charge-randomizing or charge-preserving).

The algebra is carried on labeled population terms rather than density
matrices, because every state that appears is a classical mixture of four
electron labels and two nuclear labels.  Weight arithmetic only uses + and
*, so the same functions run on floats or on symbolic scalars.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCENARIOS = ("no-memory", "charge-preserving")

# electron labels: desired m_s=0; mixed m_s=0/-1; other spin m_s=+1;
# neutral charge state (inert, gates fluorescence to zero)
_E_LABELS = ("0", "m", "s", "c")
_N_LABELS = ("0", "m")


@dataclass(frozen=True)
class InitPopulations:
    """Electron pumping weights (desired, mixed, other-spin, charge)."""

    p1: float
    p2: float
    p3: float
    p4: float

    def __post_init__(self):
        vals = (self.p1, self.p2, self.p3, self.p4)
        if min(vals) < 0:
            raise ValueError("populations must be nonnegative")
        if abs(sum(vals) - 1.0) > 1e-12:
            raise ValueError("populations must sum to 1")

    def as_dict(self) -> dict[str, float]:
        return {"0": self.p1, "m": self.p2, "s": self.p3, "c": self.p4}


def _check_scenario(scenario: str) -> None:
    if scenario not in SCENARIOS:
        raise ValueError(f"scenario must be one of {SCENARIOS}")


def _swap(terms: dict) -> dict:
    """Swap gate on labeled terms.

    The gate exchanges the electron's m_s = 0/-1 sector content with the
    nuclear spin; terms with the electron in m_s = +1 or the neutral
    charge state do not participate.
    """
    out: dict = {}
    for (e, n), w in terms.items():
        key = (n, e) if e in ("0", "m") else (e, n)
        out[key] = out.get(key, 0) + w
    return out


def _reset(terms: dict, weights: dict, scenario: str) -> dict:
    """Electron re-initialization, leaving the nuclear marginal untouched.

    With no charge memory the electron is redrawn from the full pumping
    mixture for every term.  A charge-preserving reset redraws only within
    the negative charge sector and leaves neutral-charge terms alone.
    """
    out: dict = {}
    if scenario == "no-memory":
        for (_, n), w in terms.items():
            for e_new, pw in weights.items():
                key = (e_new, n)
                out[key] = out.get(key, 0) + w * pw
        return out
    p_minus = weights["0"] + weights["m"] + weights["s"]
    for (e, n), w in terms.items():
        if e == "c":
            out[(e, n)] = out.get((e, n), 0) + w
            continue
        for e_new in ("0", "m", "s"):
            key = (e_new, n)
            out[key] = out.get(key, 0) + w * weights[e_new] / p_minus
    return out


def chain_state(p: InitPopulations | dict, scenario: str = "no-memory") -> dict:
    """Population terms after the init - swap - reset - swap chain.

    Returns a mapping (electron label, nuclear label) -> weight, where the
    labels are '0' (desired), 'm' (mixed), 's' (other spin state), 'c'
    (neutral charge), and the nuclear spin starts fully mixed.
    """
    _check_scenario(scenario)
    weights = p.as_dict() if isinstance(p, InitPopulations) else dict(p)
    terms = {(e, "m"): w for e, w in weights.items()}
    terms = _swap(terms)
    terms = _reset(terms, weights, scenario)
    return _swap(terms)


def fidelity_bounds(p: InitPopulations) -> tuple[float, float, float]:
    """(max contrast, fidelity bound without charge memory, with it).

    The contrast bound is p1 + p2; the fidelity bounds are
    1/2 + (p1+p2)/2 and 1/2 + (p1+p2)/(2(p1+p2+p3)).  The second bound is
    independent of the charge initialization weight p4.
    """
    c_max = p.p1 + p.p2
    p_minus = p.p1 + p.p2 + p.p3
    if p_minus <= 0:
        raise ValueError("charge-preserving bound needs p1+p2+p3 > 0")
    return c_max, 0.5 + c_max / 2, 0.5 + c_max / (2 * p_minus)


def contrast(p: InitPopulations, scenario: str = "no-memory") -> float:
    """Signal contrast of one init/readout chain under the scenario."""
    _check_scenario(scenario)
    c_max, f_nm, f_cp = fidelity_bounds(p)
    f = f_nm if scenario == "no-memory" else f_cp
    return 2 * f - 1


def apply_init_error(
    rho: np.ndarray, p: InitPopulations, scenario: str = "no-memory"
) -> np.ndarray:
    """Fold init/readout imperfection into a two-nucleus density matrix.

    Each nuclear spin's init/readout chain scales that spin's Bloch
    components by the scenario contrast; the equivalent channel is local
    depolarization with retention equal to the contrast, applied to each
    spin.  Reported fidelities through this channel are uncorrected
    values, as quoted for the hardware.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError("rho must be a 4x4 nuclear density matrix")
    m = contrast(p, scenario)
    eye = np.eye(2, dtype=complex) / 2
    r4 = rho.reshape(2, 2, 2, 2)
    marg1 = np.einsum("abcb->ac", r4)  # trace out spin 2
    marg2 = np.einsum("abac->bc", r4)  # trace out spin 1
    return (
        m * m * rho
        + m * (1 - m) * (np.kron(marg1, eye) + np.kron(eye, marg2))
        + (1 - m) ** 2 * np.kron(eye, eye)
    )


def signal_weight(terms: dict) -> float:
    """Fluorescence signal of a term mixture: only m_s = 0 lights up."""
    total = 0
    for (e, _), w in terms.items():
        if e == "0":
            total = total + w
    return total

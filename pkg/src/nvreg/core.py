"""Linear-algebra primitives for the three-spin register.

The register is ordered (electron, nuclear 1, nuclear 2) with local dimension
2 each.  Electron basis: |0> is the m_s = 0 sublevel, |1> is m_s = -1.
Nuclear basis: |0> = |up>, |1> = |down> along z.

Hamiltonian coefficients are cyclic frequencies in kHz and times are in ms, so
propagators carry an explicit 2*pi.
"""

from __future__ import annotations

import numpy as np

DIMS = (2, 2, 2)
ELECTRON, NUC1, NUC2 = 0, 1, 2

ID2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
# spin-1/2 operators
IX, IY, IZ = SX / 2, SY / 2, SZ / 2

PAULI = {"I": ID2, "X": SX, "Y": SY, "Z": SZ}

KET0 = np.array([1, 0], dtype=complex)
KET1 = np.array([0, 1], dtype=complex)


def kron(*ops) -> np.ndarray:
    """Kronecker product of any number of operators."""
    out = np.array([[1.0 + 0j]])
    for op in ops:
        out = np.kron(out, np.asarray(op, dtype=complex))
    return out


def tensor_embed(op: np.ndarray, slot: int, dims=DIMS) -> np.ndarray:
    """Embed a single-site operator at position `slot` of the register."""
    op = np.asarray(op, dtype=complex)
    if op.shape != (dims[slot], dims[slot]):
        raise ValueError(f"operator shape {op.shape} does not fit slot {slot}")
    factors = [np.eye(d, dtype=complex) for d in dims]
    factors[slot] = op
    return kron(*factors)


def propagator(h: np.ndarray, t_ms: float) -> np.ndarray:
    """exp(-i 2*pi H t) for Hermitian H in kHz and t in ms.

    Uses an eigendecomposition, which is exact and cheap for the small dense
    matrices used here.
    """
    h = np.asarray(h, dtype=complex)
    if not np.allclose(h, h.conj().T, atol=1e-10):
        raise ValueError("propagator requires a Hermitian generator")
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-2j * np.pi * w * t_ms)) @ v.conj().T


def dm(psi: np.ndarray) -> np.ndarray:
    """Outer product |psi><psi| for a state vector."""
    psi = np.asarray(psi, dtype=complex).ravel()
    return np.outer(psi, psi.conj())


def partial_trace(rho: np.ndarray, keep, dims=DIMS) -> np.ndarray:
    """Trace out all subsystems not listed in `keep` (order preserved)."""
    keep = tuple(keep)
    n = len(dims)
    rho = np.asarray(rho, dtype=complex).reshape(dims + dims)
    # contract traced-out indices pairwise
    traced = 0
    for site in range(n):
        if site in keep:
            continue
        ax1 = site - traced
        ax2 = site - traced + (n - traced)
        rho = np.trace(rho, axis1=ax1, axis2=ax2)
        traced += 1
    d = int(np.prod([dims[s] for s in keep])) if keep else 1
    return rho.reshape(d, d)


def partial_trace_electron(rho8: np.ndarray) -> np.ndarray:
    """Reduce the 8-dim register state to the two nuclear spins (4-dim)."""
    return partial_trace(rho8, keep=(NUC1, NUC2))


def state_fidelity(target, rho: np.ndarray) -> float:
    """<psi|rho|psi> for a pure target (vector or rank-1 density matrix)."""
    rho = np.asarray(rho, dtype=complex)
    target = np.asarray(target, dtype=complex)
    if target.ndim == 1:
        f = np.real(target.conj() @ rho @ target)
    else:
        f = np.real(np.trace(target @ rho))
    return float(np.clip(f, 0.0, 1.0))


def rotation(axis, angle: float) -> np.ndarray:
    """SU(2) rotation exp(-i angle (axis . sigma)/2); axis need not be unit."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    gen = axis[0] * SX + axis[1] * SY + axis[2] * SZ
    return np.cos(angle / 2) * ID2 - 1j * np.sin(angle / 2) * gen


def rx(angle: float) -> np.ndarray:
    return rotation([1, 0, 0], angle)


def ry(angle: float) -> np.ndarray:
    return rotation([0, 1, 0], angle)


def rz(angle: float) -> np.ndarray:
    return rotation([0, 0, 1], angle)


def equatorial_rotation(azimuth: float, angle: float) -> np.ndarray:
    """Rotation about the equatorial axis at the given azimuth (0 = x)."""
    return rotation([np.cos(azimuth), np.sin(azimuth), 0.0], angle)


def axis_angle(u: np.ndarray):
    """Axis and angle of a 2x2 unitary, up to global phase.

    Returns (n_hat, angle) with angle in [0, 2*pi).  The global phase is fixed
    by rotating the determinant to 1 and taking the real part of the trace as
    cos(angle/2).
    """
    u = np.asarray(u, dtype=complex)
    ph = np.exp(-1j * np.angle(np.linalg.det(u)) / 2)
    u = ph * u
    c = np.real(np.trace(u)) / 2.0
    n = np.real(1j * np.array([np.trace(SX @ u), np.trace(SY @ u), np.trace(SZ @ u)])) / 2.0
    s = np.linalg.norm(n)
    if s < 1e-14:
        return np.array([0.0, 0.0, 1.0]), 0.0 if c > 0 else 2 * np.pi
    return n / s, float(2 * np.arctan2(s, c))


def fold_rotation(n_hat: np.ndarray, angle: float):
    """Map a rotation with angle > pi to the equivalent one with angle <= pi."""
    if angle > np.pi:
        return -n_hat, 2 * np.pi - angle
    return n_hat, angle


def singlet() -> np.ndarray:
    """(|01> - |10>)/sqrt(2) on the two nuclear spins (|0> = up)."""
    v = np.zeros(4, dtype=complex)
    v[1], v[2] = 1, -1
    return v / np.sqrt(2)


def triplet() -> np.ndarray:
    """(|01> + |10>)/sqrt(2) on the two nuclear spins."""
    v = np.zeros(4, dtype=complex)
    v[1], v[2] = 1, 1
    return v / np.sqrt(2)


def bell_state(name: str) -> np.ndarray:
    """Bell states by name: S, T (the 01/10 pair) and phi+, phi- (00/11)."""
    if name == "S":
        return singlet()
    if name == "T":
        return triplet()
    v = np.zeros(4, dtype=complex)
    if name == "phi+":
        v[0], v[3] = 1, 1
    elif name == "phi-":
        v[0], v[3] = 1, -1
    else:
        raise ValueError(f"unknown Bell state {name!r}")
    return v / np.sqrt(2)


def is_unitary(u: np.ndarray, atol: float = 1e-10) -> bool:
    u = np.asarray(u)
    return np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=atol)


def is_density_matrix(rho: np.ndarray, atol: float = 1e-8) -> bool:
    rho = np.asarray(rho)
    if not np.allclose(rho, rho.conj().T, atol=atol):
        return False
    if abs(np.trace(rho).real - 1.0) > atol:
        return False
    return bool(np.linalg.eigvalsh(rho).min() > -10 * atol)


def haar_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random pure state vector."""
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a Ginibre matrix."""
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))

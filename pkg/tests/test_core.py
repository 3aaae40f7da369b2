"""Linear-algebra core: embeddings, propagators, traces, Bell-pair states."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nvreg.core import (
    IX,
    IY,
    IZ,
    axis_angle,
    dm,
    equatorial_rotation,
    kron,
    partial_trace,
    propagator,
    rz,
    singlet,
    state_fidelity,
    tensor_embed,
    triplet,
)

RNG = np.random.default_rng(1234)


def random_state(dim, rng=RNG):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_hermitian(dim, rng=RNG):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (a + a.conj().T) / 2


class TestPaulis:
    def test_algebra(self):
        assert np.allclose(IX @ IX, np.eye(2))
        assert np.allclose(IY @ IY, np.eye(2))
        assert np.allclose(IZ @ IZ, np.eye(2))
        assert np.allclose(IX @ IY - IY @ IX, 2j * IZ)

    def test_kron_matches_numpy(self):
        assert np.allclose(kron(IX, IY, IZ), np.kron(IX, np.kron(IY, IZ)))


class TestTensorEmbed:
    def test_slots(self):
        full = tensor_embed(IZ, 0)
        assert full.shape == (8, 8)
        assert np.allclose(full, np.kron(IZ, np.eye(4)))
        assert np.allclose(tensor_embed(IZ, 1), np.kron(np.eye(2), np.kron(IZ, np.eye(2))))
        assert np.allclose(tensor_embed(IZ, 2), np.kron(np.eye(4), IZ))

    def test_custom_dims(self):
        m = tensor_embed(IX, 1, dims=(2, 2))
        assert m.shape == (4, 4)
        assert np.allclose(m, np.kron(np.eye(2), IX))


class TestPropagator:
    def test_unitarity_and_energy_phase(self):
        h = random_hermitian(4)
        u = propagator(h, 0.37)
        assert np.allclose(u @ u.conj().T, np.eye(4), atol=1e-12)
        # frequency in cyclic units: a 1-level system at f acquires e^{-2 pi i f t}
        u1 = propagator(np.array([[2.5]]), 0.2)
        assert np.allclose(u1[0, 0], np.exp(-2j * np.pi * 2.5 * 0.2))

    def test_composition(self):
        h = random_hermitian(4)
        assert np.allclose(
            propagator(h, 0.3) @ propagator(h, 0.2), propagator(h, 0.5), atol=1e-12
        )


class TestPartialTrace:
    def test_product_state_factors(self):
        a, b, c = (random_state(2) for _ in range(3))
        rho = dm(np.kron(a, np.kron(b, c)))
        red = partial_trace(rho, keep=(1, 2), dims=(2, 2, 2))
        assert np.allclose(red, dm(np.kron(b, c)), atol=1e-12)

    def test_trace_preserved(self):
        psi = random_state(8)
        red = partial_trace(dm(psi), keep=(0,), dims=(2, 2, 2))
        assert np.isclose(np.trace(red).real, 1.0)


class TestBellStates:
    def test_forms(self):
        s, t = singlet(), triplet()
        inv = 1 / np.sqrt(2)
        assert np.allclose(s, [0, inv, -inv, 0])
        assert np.allclose(t, [0, inv, inv, 0])
        assert np.isclose(abs(np.vdot(s, t)), 0.0)

    def test_singlet_collective_invariance_exact(self):
        theta, phi_ = 0.7, 1.1
        u = equatorial_rotation(phi_, theta)
        uu = np.kron(u, u)
        s = singlet()
        overlap = abs(np.vdot(s, uu @ s))
        assert np.isclose(overlap, 1.0, atol=1e-12)


class TestRotations:
    def test_rz_phase_convention(self):
        u = rz(np.pi / 2)
        assert np.allclose(u, np.diag([np.exp(-1j * np.pi / 4), np.exp(1j * np.pi / 4)]))

    def test_equatorial_axis(self):
        # azimuth 0 is a rotation about +x
        u = equatorial_rotation(0.0, np.pi)
        assert np.allclose(u, -1j * IX, atol=1e-12)

    def test_axis_angle_roundtrip(self):
        axis, angle = axis_angle(equatorial_rotation(0.3, 1.2))
        assert np.isclose(angle, 1.2)
        assert np.allclose(axis, [np.cos(0.3), np.sin(0.3), 0.0], atol=1e-12)


class TestFidelity:
    def test_pure_overlap(self):
        psi, chi = random_state(4), random_state(4)
        f = state_fidelity(dm(psi), dm(chi))
        assert np.isclose(f, abs(np.vdot(psi, chi)) ** 2)

    def test_extremes(self):
        s = dm(singlet())
        assert np.isclose(state_fidelity(s, s), 1.0)
        assert np.isclose(state_fidelity(s, dm(triplet())), 0.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(0.01, 5.0))
def test_propagator_time_additivity(t1, t2):
    h = np.array([[1.0, 0.3 + 0.2j], [0.3 - 0.2j, -0.5]])
    lhs = propagator(h, t1) @ propagator(h, t2)
    assert np.allclose(lhs, propagator(h, t1 + t2), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(
    st.floats(0, 2 * np.pi), st.floats(0.01, np.pi),
    st.floats(0, 2 * np.pi), st.floats(0.01, np.pi),
)
def test_singlet_invariant_under_any_collective_rotation(a1, t1, a2, t2):
    u = equatorial_rotation(a1, t1) @ rz(1.3) @ equatorial_rotation(a2, t2)
    s = singlet()
    assert np.isclose(abs(np.vdot(s, np.kron(u, u) @ s)), 1.0, atol=1e-10)

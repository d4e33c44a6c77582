import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from euler_maxwell.oracle import generator
from euler_maxwell.propagator import (
    B,
    E,
    ModeSplit,
    RHO,
    SpectralState,
    U,
    cancellation_residuals,
    compatibility_residual,
    helmholtz_merge,
    helmholtz_split,
    longitudinal_matrix,
    propagate,
    propagate_arrays,
    random_compatible,
    transverse_coefficients,
    transverse_evolve,
    zero_mode_arrays,
    zero_mode_evolve,
)
from euler_maxwell.roots import solve_characteristic

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def random_k(rng, lo=-3, hi=2):
    d = rng.standard_normal(3)
    return 10 ** rng.uniform(lo, hi) * d / np.linalg.norm(d)


def random_state(rng, k):
    return SpectralState.from_array(k, random_compatible(rng, k))


def random_transverse(rng, k):
    kh = k / np.linalg.norm(k)
    m = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    return m - np.outer(m @ kh, kh)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# --- Helmholtz split ---------------------------------------------------------


def test_axis_aligned_split():
    s = SpectralState([1.0, 0, 0], 0.0, [2.0, 3.0, 4.0], [0, 5.0, 6.0], [0, 1.0, 2.0])
    sp = helmholtz_split(s)
    assert np.allclose(sp.u_par, [2.0, 0, 0])
    assert np.allclose(sp.m[0], [0, 3.0, 4.0])
    assert np.allclose(sp.m[1], [0, 5.0, 6.0])


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_split_merge_roundtrip(seed):
    rng = np.random.default_rng(seed)
    k = random_k(rng)
    y = rng.standard_normal(10) + 1j * rng.standard_normal(10)
    kh = k / np.linalg.norm(k)
    y[B] -= kh * (kh @ y[B])  # B has no longitudinal slot
    s = SpectralState.from_array(k, y)
    sp = helmholtz_split(s)
    back = helmholtz_merge(sp).to_array()
    assert np.max(np.abs(back - y)) <= 1e-14 * np.max(np.abs(y)) * 4
    kh = k / np.linalg.norm(k)
    assert np.max(np.abs(sp.m @ kh)) <= 1e-14 * np.max(np.abs(y)) * 4
    assert np.linalg.norm(np.cross(sp.u_par, kh)) <= 1e-14 * np.linalg.norm(y) * 4


def test_purely_longitudinal_merge():
    k = np.array([0.3, -0.4, 1.2])
    kh = k / np.linalg.norm(k)
    sp = ModeSplit(k, -1j * (k @ (0.7 * kh)), 2.0 * kh, 0.7 * kh, np.zeros((3, 3)))
    s = helmholtz_merge(sp)
    assert np.allclose(np.cross(s.u, kh), 0) and np.allclose(s.B, 0)


def test_split_rejects_zero_k():
    with pytest.raises(ValueError):
        helmholtz_split(SpectralState(np.zeros(3), 0, np.ones(3), np.ones(3), np.ones(3)))


# --- longitudinal block ------------------------------------------------------


def test_longitudinal_identity_at_zero():
    assert np.allclose(longitudinal_matrix(0.0, [0.2, 0.5, -1.0]), np.eye(7), atol=0, rtol=0)


def test_density_matches_damped_oscillator():
    rng = np.random.default_rng(3)
    gamma = 5 / 3
    for _ in range(5):
        k = random_k(rng, -1, 1)
        s = random_state(rng, k)
        kk = k @ k
        theta = np.sqrt(0.75 + gamma * kk)
        drho = -1j * (k @ s.u)
        for t in (0.3, 2.0, 7.5):
            want = np.exp(-t / 2) * (s.rho * np.cos(theta * t)
                                     + (drho + s.rho / 2) * np.sin(theta * t) / theta)
            got = propagate(t, s, gamma).rho
            assert abs(got - want) <= 1e-12 * s.norm()


def test_longitudinal_block_against_expm():
    k = np.array([0.6, 0.0, 0.8])
    rng = np.random.default_rng(1)
    s = random_state(rng, k)
    sp = helmholtz_split(s)
    G = longitudinal_matrix(1.0, k, 5 / 3)
    got = G @ sp.longitudinal
    ref = expm(generator(k, 5 / 3)) @ s.to_array()
    kh = k / np.linalg.norm(k)
    want = np.concatenate([[ref[RHO]], kh * (kh @ ref[U]), kh * (kh @ ref[E])])
    assert rel(got, want) < 1e-8


# --- transverse block --------------------------------------------------------


def transverse_A(kmag):
    tri = solve_characteristic(kmag)
    s, b, w = tri.sigma, tri.beta, tri.omega
    return np.array([[1, 1, 0], [s, b, w], [s * s, b * b - w * w, 2 * b * w]]), tri


@pytest.mark.parametrize("kmag", [1e-3, 0.1, 1.0, 10.0, 100.0])
def test_coefficients_reproduce_initial_data(kmag):
    rng = np.random.default_rng(int(kmag * 1000))
    d = rng.standard_normal(3)
    k = kmag * d / np.linalg.norm(d)
    m0 = random_transverse(rng, k)
    c = transverse_coefficients(k, m0)
    A, tri = transverse_A(kmag)
    # M2, M2' and M2'' at t = 0 from the first-order system
    data = np.stack([m0[1], m0[0] + 1j * np.cross(k, m0[2]), -m0[0] - (1 + kmag**2) * m0[1]])
    got = A @ np.stack([c.c1, c.c2, c.c3])
    assert np.max(np.abs(got - data)) <= 1e-10 * np.max(np.abs(data))
    assert np.allclose(c.c1 + c.c2, m0[1], rtol=0, atol=1e-12 * np.abs(m0).max())
    for ci in (c.c1, c.c2, c.c3):
        assert abs(k @ ci) <= 1e-12 * kmag * np.abs(m0).max()


@pytest.mark.parametrize("kmag", np.logspace(-3, 3, 13))
def test_determinant_positive(kmag):
    A, tri = transverse_A(kmag)
    s, b, w = tri.sigma, tri.beta, tri.omega
    det = np.linalg.det(A)
    assert det > 0
    assert det == pytest.approx(w * (3 * s * s + 2 * s + 1 + kmag**2), rel=1e-9)
    assert det == pytest.approx(w * (w * w + (s - b) ** 2), rel=1e-9)


def test_cancellations_vanish():
    rng = np.random.default_rng(5)
    k = np.array([random_k(rng) for _ in range(200)])
    kh = k / np.linalg.norm(k, axis=1, keepdims=True)
    m = rng.standard_normal((200, 3, 3)) + 1j * rng.standard_normal((200, 3, 3))
    m = m - np.einsum("nij,nj,nk->nik", m, kh, kh)
    r1, r3 = cancellation_residuals(k, m[:, 0], m[:, 1], m[:, 2])
    scale = np.abs(m).max(axis=(1, 2))
    assert np.max(np.linalg.norm(r1, axis=1) / scale) < 1e-10
    assert np.max(np.linalg.norm(r3, axis=1) / scale) < 1e-10


def test_transverse_identity_and_zero():
    rng = np.random.default_rng(9)
    k = random_k(rng)
    m0 = random_transverse(rng, k)
    assert np.max(np.abs(transverse_evolve(0.0, k, m0) - m0)) <= 1e-10 * np.abs(m0).max()
    assert np.all(transverse_evolve(3.0, k, np.zeros((3, 3))) == 0)


# --- full propagator ---------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(0.0, 10.0), st.sampled_from([1.4, 5 / 3, 2.0]))
def test_propagator_matches_matrix_exponential(seed, t, gamma):
    rng = np.random.default_rng(seed)
    k = random_k(rng)
    s = random_state(rng, k)
    ref = expm(t * generator(k, gamma)) @ s.to_array()
    assert rel(propagate(t, s, gamma).to_array(), ref) <= 1e-8


def test_identity_at_zero_time():
    rng = np.random.default_rng(2)
    for _ in range(20):
        s = random_state(rng, random_k(rng))
        assert rel(propagate(0.0, s).to_array(), s.to_array()) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_semigroup(seed, t, s_):
    rng = np.random.default_rng(seed)
    s0 = random_state(rng, random_k(rng))
    lhs = propagate(t + s_, s0).to_array()
    rhs = propagate(t, propagate(s_, s0)).to_array()
    assert np.linalg.norm(lhs - rhs) <= 1e-9 * max(np.linalg.norm(lhs), 1e-300) + 1e-15


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(0.0, 10.0))
def test_linearity(seed, t):
    rng = np.random.default_rng(seed)
    k = random_k(rng)
    x, y = random_compatible(rng, k), random_compatible(rng, k)
    a, b = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    lhs = propagate_arrays(t, k, a * x + b * y)
    rhs = a * propagate_arrays(t, k, x) + b * propagate_arrays(t, k, y)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * (abs(a) + abs(b))


def test_constraints_preserved():
    rng = np.random.default_rng(4)
    for _ in range(50):
        k = random_k(rng)
        y0 = random_compatible(rng, k)
        r0e, r0b = compatibility_residual(k, y0)
        for t in (0.5, 3.0, 10.0):
            re_, rb = compatibility_residual(k, propagate_arrays(t, k, y0))
            assert re_ <= 10 * r0e + 1e-12
            assert rb <= 10 * r0b + 1e-12


def test_batched_matches_single():
    rng = np.random.default_rng(8)
    k = np.array([random_k(rng) for _ in range(6)])
    y = random_compatible(rng, k)
    batch = propagate_arrays(2.5, k, y)
    for i in range(6):
        single = propagate(2.5, SpectralState.from_array(k[i], y[i])).to_array()
        assert np.array_equal(batch[i], single)


def test_tiny_k_delegates_to_integrator():
    k = np.array([3e-7, 0.0, 4e-7])
    s = random_state(np.random.default_rng(0), k)
    ref = expm(4.0 * generator(k)) @ s.to_array()
    assert rel(propagate(4.0, s).to_array(), ref) <= 1e-8


def test_rejects_incompatible_state():
    k = np.array([0.0, 0.0, 1.0])
    s = SpectralState(k, 1.0, np.zeros(3), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError, match="incompatible"):
        propagate(1.0, s)
    s = SpectralState(k, 0.0, np.zeros(3), np.zeros(3), [0, 0, 1.0])
    with pytest.raises(ValueError):
        propagate(1.0, s)


def test_rejects_negative_time_and_bad_gamma():
    s = random_state(np.random.default_rng(0), np.array([1.0, 0, 0]))
    with pytest.raises(ValueError):
        propagate(-1.0, s)
    with pytest.raises(ValueError):
        propagate(1.0, s, gamma=1.0)


# --- zero mode ---------------------------------------------------------------


def test_zero_mode_magnetic_field_frozen():
    s = SpectralState(np.zeros(3), 0.0, [1.0, 2, 3], [0.5, 0, -1], [4.0, -2j, 1])
    for t in (0.0, 1.0, 30.0):
        assert np.array_equal(zero_mode_evolve(t, s).B, s.B)
        assert zero_mode_evolve(t, s).rho == 0


def test_zero_mode_block_is_exponential():
    block = np.array([[-1.0, -1.0], [1.0, 0.0]])
    assert np.allclose(np.sort_complex(np.linalg.eigvals(block)),
                       np.sort_complex(np.array([-0.5 - 0.5j * np.sqrt(3), -0.5 + 0.5j * np.sqrt(3)])))
    for t in (0.1, 1.0, 6.0):
        y = np.zeros((2, 10), dtype=complex)
        y[0, 1] = 1.0  # u_x
        y[1, 4] = 1.0  # E_x
        out = zero_mode_arrays(t, y)
        got = np.array([[out[0, 1], out[1, 1]], [out[0, 4], out[1, 4]]])
        assert np.allclose(got, expm(t * block), atol=1e-14)


def test_zero_mode_zero_stays_zero_and_rejects_density():
    s = SpectralState(np.zeros(3), 0.0, np.zeros(3), np.zeros(3), np.zeros(3))
    assert zero_mode_evolve(5.0, s).norm() == 0
    with pytest.raises(ValueError):
        zero_mode_evolve(1.0, SpectralState(np.zeros(3), 0.1, np.zeros(3), np.zeros(3), np.zeros(3)))
    with pytest.raises(ValueError):
        zero_mode_evolve(1.0, SpectralState([1.0, 0, 0], 0, np.zeros(3), np.zeros(3), np.zeros(3)))


def test_zero_mode_via_propagate():
    s = SpectralState(np.zeros(3), 0.0, [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0])
    ref = expm(2.0 * generator(np.zeros(3))) @ s.to_array()
    assert rel(propagate(2.0, s).to_array(), ref) < 1e-13

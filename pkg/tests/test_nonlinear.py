import itertools

import numpy as np
import pytest

from euler_maxwell.lyapunov import KappaWeights
from euler_maxwell.nonlinear import (
    SERIES_COLUMNS,
    CFLViolation,
    DensityCollapse,
    GridField,
    constraint_residual,
    convergence_order,
    energy_functionals,
    evolve,
    l2_norm,
    make_grid,
    nonlinear_sources,
    phi_sigma,
    propagate_linear,
    random_initial_field,
    read_snapshot,
    simulate,
    stable_dt,
    step,
    symmetric_residual,
    transform_from_symmetric,
    transform_to_symmetric,
    write_snapshot,
)

L = 2 * np.pi * 10


def zero_field(n=8, box=L, gamma=5 / 3):
    return GridField.from_stacked(np.zeros((10, n, n, n)), box, 0.0, gamma)


def coords(n, box):
    x = np.arange(n) * box / n
    return np.meshgrid(x, x, x, indexing="ij")


# --- pointwise transforms ----------------------------------------------------


@pytest.mark.parametrize("gamma", [1.4, 5 / 3, 2.0, 3.0])
def test_phi_vanishes_to_second_order(gamma):
    assert phi_sigma(0.0, gamma) == 0.0
    h = 1e-6
    assert abs(phi_sigma(h, gamma) - phi_sigma(-h, gamma)) / (2 * h) < 1e-9


def test_phi_special_exponents():
    s = np.linspace(-0.9, 3, 31)
    assert np.allclose(phi_sigma(s, 2.0), s**2 / 4, rtol=0, atol=1e-14)
    assert np.allclose(phi_sigma(s, 3.0), 0.0, atol=1e-14)
    with pytest.raises(DensityCollapse):
        phi_sigma(-2.5, 2.0)


def test_symmetric_transform_roundtrip():
    rng = np.random.default_rng(0)
    arr = 0.2 * rng.uniform(-1, 1, (10, 8, 8, 8))
    for gamma in (1.4, 5 / 3, 2.0):
        f = GridField.from_stacked(arr, L, 1.5, gamma)
        s = transform_to_symmetric(f)
        assert s.time == pytest.approx(np.sqrt(gamma) * 1.5)
        back = transform_from_symmetric(s)
        assert np.max(np.abs(back.stacked() - arr)) < 1e-12
        assert back.time == pytest.approx(1.5, rel=1e-15)
    s2 = transform_to_symmetric(GridField.from_stacked(arr, L, 0.0, 2.0))
    assert np.allclose(s2.sigma, 2 * (np.sqrt(1 + arr[0]) - 1), atol=1e-15)
    assert np.allclose(s2.v, arr[1:4] / np.sqrt(2), atol=1e-15)


def test_equilibrium_maps_to_zero():
    s = transform_to_symmetric(zero_field())
    assert not np.any(s.stacked())


# --- nonlinear sources -------------------------------------------------------


def test_sources_vanish_at_equilibrium():
    for g in nonlinear_sources(zero_field()):
        assert not np.any(g)


def test_sources_of_constant_state():
    n = 8
    arr = np.zeros((10, n, n, n))
    arr[0] = 0.2
    arr[1:4] = np.array([0.1, -0.3, 0.05])[:, None, None, None]
    arr[7:10] = np.array([0.0, 0.0, 0.4])[:, None, None, None]
    g1, g2, g3 = nonlinear_sources(GridField.from_stacked(arr, L))
    assert np.max(np.abs(g1)) < 1e-15
    assert np.allclose(g3, 0.2 * arr[1:4], atol=1e-15)
    want = -np.cross([0.1, -0.3, 0.05], [0.0, 0.0, 0.4])
    assert np.allclose(g2, want[:, None, None, None], atol=1e-15)


def full_coefficients(field, n, cut):
    """Fourier coefficients c[m] with f = sum c[m] exp(i k_m x) for |m_i| <= cut."""
    c = np.fft.fftn(field, axes=(-3, -2, -1)) / n**3
    idx = np.arange(-cut, cut + 1) % n
    return c[..., idx[:, None, None], idx[None, :, None], idx[None, None, :]]


def convolve(a, b, cut):
    """Brute-force sum over mode pairs, result on |m_i| <= 2 cut."""
    a, b = np.broadcast_arrays(a, b)
    size = 4 * cut + 1
    out = np.zeros(a.shape[:-3] + (size, size, size), dtype=complex)
    r = range(2 * cut + 1)
    for p in itertools.product(r, r, r):
        for q in itertools.product(r, r, r):
            out[..., p[0] + q[0], p[1] + q[1], p[2] + q[2]] += a[..., p[0], p[1], p[2]] * b[..., q[0], q[1], q[2]]
    return out[..., cut:3 * cut + 1, cut:3 * cut + 1, cut:3 * cut + 1]


def test_sources_match_convolution_oracle():
    n, cut, gamma = 8, 2, 3.0  # gamma = 3 makes the pressure term quadratic
    f = random_initial_field(n, L, amplitude=0.05, seed=4, gamma=gamma, mode_cutoff=2)
    kf = 2 * np.pi / L
    m = np.arange(-cut, cut + 1)
    K = kf * np.stack(np.meshgrid(m, m, m, indexing="ij"))  # (3, 5, 5, 5)
    rho = full_coefficients(f.rho, n, cut)
    u = full_coefficients(f.u, n, cut)
    bb = full_coefficients(f.B, n, cut)
    grad_rho = 1j * K * rho
    grad_u = 1j * K[None] * u[:, None]  # [i, j] = d_j u_i

    rho_u = convolve(rho[None], u, cut)
    g1 = -1j * np.sum(K * rho_u, axis=0)
    adv = sum(convolve(u[j][None], grad_u[:, j], cut) for j in range(3))
    lorentz = np.stack([convolve(u[(i + 1) % 3], bb[(i + 2) % 3], cut)
                        - convolve(u[(i + 2) % 3], bb[(i + 1) % 3], cut) for i in range(3)])
    pressure = gamma * convolve(rho[None], grad_rho, cut)
    g2 = -adv - lorentz - pressure

    got = nonlinear_sources(f)
    for name, ours, want in zip(("g1", "g2", "g3"), got, (g1, g2, rho_u)):
        c = full_coefficients(ours, n, cut)
        assert np.max(np.abs(c - want)) <= 1e-12 * max(np.max(np.abs(want)), 1e-300), name
        # nothing outside the retained band
        spec = np.fft.fftn(ours, axes=(-3, -2, -1))
        assert np.abs(spec).sum() == pytest.approx(np.abs(c).sum() * n**3, rel=1e-12)


# --- stepping ----------------------------------------------------------------


def test_equilibrium_is_fixed_point():
    f = zero_field(16)
    g = evolve(f, stable_dt(16, L), 5)
    assert not np.any(g.stacked())


def test_cfl_and_density_errors():
    f = random_initial_field(8, L, seed=1)
    with pytest.raises(CFLViolation):
        step(f, 2 * stable_dt(8, L, f.gamma))
    bad = f.stacked()
    bad[0, 0, 0, 0] = -1.5
    with pytest.raises(DensityCollapse):
        step(GridField.from_stacked(bad, L), stable_dt(8, L))


def test_generator_is_compatible_and_scaled():
    f = random_initial_field(16, L, amplitude=1e-2, seed=2)
    assert l2_norm(f) == pytest.approx(1e-2, rel=1e-12)
    gauss, divb = constraint_residual(f)
    assert gauss <= 1e-12 and divb <= 1e-12
    assert np.all(np.abs(f.stacked().mean(axis=(1, 2, 3))) < 1e-15)


def test_corrupted_field_detected():
    f = random_initial_field(16, L, seed=3)
    arr = f.stacked()
    arr[0] += 1e-3 * np.cos(2 * np.pi * coords(16, L)[0] / L)
    gauss, _ = constraint_residual(GridField.from_stacked(arr, L))
    assert gauss > 1e-4


def test_single_step_keeps_constraints():
    f = random_initial_field(16, L, seed=5)
    g = step(f, stable_dt(16, L, f.gamma))
    assert max(constraint_residual(g)) <= 1e-12
    assert g.time == pytest.approx(stable_dt(16, L, f.gamma))


def test_linear_regime_matches_propagator():
    f = random_initial_field(16, L, amplitude=1e-8, seed=6)
    dt = stable_dt(16, L, f.gamma)
    a = evolve(f, dt, 50).stacked()
    b = propagate_linear(f, 50 * dt).stacked()
    assert np.linalg.norm(a - b) / np.linalg.norm(b) <= 1e-10


def test_linear_splitting_is_exact():
    f = random_initial_field(16, L, amplitude=1e-2, seed=7)
    dt = stable_dt(16, L, f.gamma)
    a = evolve(f, dt, 20, nonlinear=False).stacked()
    b = propagate_linear(f, 20 * dt).stacked()
    assert np.linalg.norm(a - b) / np.linalg.norm(b) <= 1e-12


def test_second_order_in_time():
    f = random_initial_field(16, L, amplitude=1e-1, seed=8)
    dt = stable_dt(16, L, f.gamma)
    assert convergence_order(f, 8 * dt, dt, levels=4) >= 1.9


def test_symmetric_equations_hold():
    f = random_initial_field(16, L, amplitude=1e-2, seed=9)
    assert symmetric_residual(f) <= 1e-6
    g = evolve(f, stable_dt(16, L, f.gamma), 20)
    assert symmetric_residual(g) <= 1e-6
    # counting the discarded band needs the default resolution
    f = random_initial_field(32, L, amplitude=1e-2, seed=9)
    g = evolve(f, stable_dt(32, L, f.gamma), 20)
    assert symmetric_residual(g, projected=False) <= 1e-6


# --- energies ----------------------------------------------------------------


def test_zero_field_energies():
    rep = energy_functionals(transform_to_symmetric(zero_field()))
    assert rep.full_energy == rep.dissipation == rep.high_order_energy == 0
    assert rep.high_order_dissipation == 0


def single_mode_field(n, box, m, amps, phase=0.3):
    """Real fields amps[c] * cos(k.x + phase) for component index c."""
    X = coords(n, box)
    k = 2 * np.pi / box * np.asarray(m, float)
    wave = np.cos(k[0] * X[0] + k[1] * X[1] + k[2] * X[2] + phase)
    arr = np.zeros((10, n, n, n))
    for c, a in amps.items():
        arr[c] = a * wave
    return arr, k


def hand_weight(k, lo, hi):
    total = 0.0
    for order in range(lo, hi + 1):
        for a in itertools.product(range(order + 1), repeat=3):
            if sum(a) == order:
                total += np.prod(k ** (2 * np.array(a)))
    return total


@pytest.mark.parametrize("N", [1, 2, 3])
def test_single_mode_energies_closed_form(N):
    n, box = 16, L
    # symmetric variables directly: sigma and v_x along k, E~ and B~ transverse
    arr, k = single_mode_field(n, box, (1, 2, 0), {0: 0.3, 1: 0.2, 2: 0.4, 6: 0.5, 9: -0.7})
    s = transform_to_symmetric(GridField.from_stacked(np.zeros_like(arr), box))
    s.sigma, s.v, s.E, s.B = arr[0], arr[1:4], arr[4:7], arr[7:10]
    kappa = KappaWeights(0.1, 0.01, 0.005)
    rep = energy_functionals(s, N, kappa)

    half_vol = box**3 / 2  # int cos^2 over the box
    k2 = k @ k
    amp = {c: 0.0 for c in range(10)} | {0: 0.3, 1: 0.2, 2: 0.4, 6: 0.5, 9: -0.7}
    fluid = amp[0] ** 2 + amp[1] ** 2 + amp[2] ** 2
    fields = amp[6] ** 2 + amp[9] ** 2
    e_sq = amp[6] ** 2
    W = lambda lo, hi: hand_weight(k, lo, hi) if hi >= lo else 0.0  # noqa: E731
    # each interactive pairing is either orthogonal or a quarter period out of
    # phase here, so only the norms contribute
    full = half_vol * W(0, N) * (fluid + fields)
    diss = half_vol * (W(0, N) * fluid + k2 * W(0, N - 2) * fields + e_sq)
    high = half_vol * k2 * W(0, N - 1) * (fluid + fields)
    high_diss = half_vol * (k2 * W(0, N - 1) * fluid + k2 * W(0, N - 2) * fields)
    assert rep.full_energy == pytest.approx(full, rel=1e-12)
    assert rep.dissipation == pytest.approx(diss, rel=1e-12)
    assert rep.high_order_energy == pytest.approx(high, rel=1e-12)
    assert rep.high_order_dissipation == pytest.approx(high_diss, rel=1e-12)
    for j in range(N + 1):
        assert rep.sobolev_norms[j] == pytest.approx(half_vol * W(j, j) * (fluid + fields),
                                                     rel=1e-12)


def test_single_mode_interactive_terms():
    n, box, N = 16, L, 2
    X = coords(n, box)
    k = 2 * np.pi / box * np.array([2.0, 0.0, 0.0])
    c, sn = np.cos(k[0] * X[0]), np.sin(k[0] * X[0])
    s = transform_to_symmetric(GridField.from_stacked(np.zeros((10, n, n, n)), box))
    s.sigma = 0.3 * c
    s.v = np.stack([0.2 * sn, 0.1 * c, 0 * c])
    s.E = np.stack([0 * c, 0.4 * c, 0 * c])
    s.B = np.stack([0 * c, 0 * c, 0.5 * sn])
    kw = KappaWeights(0.1, 0.01, 0.005)
    e_k = energy_functionals(s, N, kw).full_energy
    e_0 = energy_functionals(s, N, KappaWeights(0, 0, 0)).full_energy
    half_vol = box**3 / 2
    kx = k[0]
    W1 = 1 + kx**2  # orders 0 and 1 along x
    # grad sigma = -0.3 kx sin(kx x) e_x against v_x = 0.2 sin
    i1 = W1 * (-0.3 * kx) * 0.2
    # v_y = 0.1 cos against E_y = 0.4 cos
    i2 = W1 * 0.1 * 0.4
    # curl E~ = d_x E_y e_z = -0.4 kx sin e_z against B_z = 0.5 sin, orders up to N - 2
    i3 = (-0.4 * kx) * 0.5
    want = half_vol * (kw.kappa1 * i1 + kw.kappa2 * i2 + kw.kappa3 * i3)
    assert e_k - e_0 == pytest.approx(want, rel=1e-10)


def test_zero_weights_give_sobolev_norm():
    f = random_initial_field(16, L, seed=10)
    rep = energy_functionals(transform_to_symmetric(f), 2, KappaWeights(0, 0, 0))
    assert rep.full_energy == pytest.approx(sum(rep.sobolev_norms.values()), rel=1e-13)


def test_order_must_be_positive():
    with pytest.raises(ValueError):
        energy_functionals(transform_to_symmetric(zero_field()), 0)


# --- runs and snapshots ------------------------------------------------------


def test_short_run_dissipates(tmp_path):
    f = random_initial_field(16, L, amplitude=1e-2, seed=11)
    res = simulate(f, 40, every=1, snapshot_dir=tmp_path, snapshot_every=20)
    assert len(res.rows) == 41 and len(res.rows[0]) == len(SERIES_COLUMNS)
    assert res.max_energy_increase() <= 1e-10
    assert res.constraint_growth() <= 1e-8
    assert res.fitted_lambda() > 0
    snaps = sorted(tmp_path.iterdir())
    assert [p.name for p in snaps] == ["snapshot_000020.bin", "snapshot_000040.bin"]
    last = read_snapshot(snaps[-1])
    assert np.array_equal(last.stacked(), res.final.stacked())
    assert last.time == pytest.approx(40 * res.dt)


def test_snapshot_roundtrip_and_layout(tmp_path):
    f = random_initial_field(8, 12.5, seed=12, gamma=1.4)
    f.time = 3.25
    path = tmp_path / "s.bin"
    write_snapshot(path, f)
    raw = path.read_bytes()
    assert raw[:8] == b"EMSNAP01"
    assert len(raw) == 8 + 3 * 4 + 3 * 8 + 10 * 8**3 * 8
    assert np.frombuffer(raw[8:20], "<i4").tolist() == [8, 8, 8]
    assert np.frombuffer(raw[20:44], "<f8").tolist() == [12.5, 3.25, 1.4]
    assert np.array_equal(np.frombuffer(raw[44:44 + 8 * 512], "<f8"), f.rho.ravel())
    g = read_snapshot(path)
    assert np.array_equal(g.stacked(), f.stacked()) and g.gamma == 1.4
    path.write_bytes(b"NOTASNAP" + raw[8:])
    with pytest.raises(ValueError):
        read_snapshot(path)


def test_grid_mask_follows_two_thirds_rule():
    g = make_grid(32, L)
    m = np.rint(g.k * L / (2 * np.pi)).astype(int)
    assert np.array_equal(g.mask, np.all(np.abs(m) <= 10, axis=-1))

"""Pseudo-spectral solver for the nonlinear system on a periodic box.

The state is U = [rho, u, E, B] with rho = n - 1 the density perturbation.
A step is Strang splitting: exact linear propagation over dt/2 per Fourier
mode, an explicit midpoint step of the nonlinear sources over dt, another
linear half step, then re-projection onto the constraint set
(rho^ = -i k.E^, k.B^ = 0).

Energies are evaluated in the symmetric variables
V = [sigma, v, E~, B~] obtained by :func:`transform_to_symmetric`.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft

from .lyapunov import DEFAULT_KAPPA, KappaWeights
from .propagator import B, DEFAULT_GAMMA, E, NCOMP, RHO, U, project_compatible, propagate_arrays

DEFAULT_N = 32
DEFAULT_BOX = 2 * np.pi * 10
DEFAULT_CFL = 0.5
DEFAULT_ORDER = 2


class DensityCollapse(ValueError):
    """1 + rho reached zero or below somewhere on the grid."""


class CFLViolation(ValueError):
    pass


@dataclass
class GridField:
    n_grid: int
    box_len: float
    rho: np.ndarray  # (n, n, n)
    u: np.ndarray  # (3, n, n, n)
    E: np.ndarray
    B: np.ndarray
    time: float = 0.0
    gamma: float = DEFAULT_GAMMA

    def stacked(self) -> np.ndarray:
        """(10, n, n, n) array in the order rho, u, E, B."""
        return np.concatenate([self.rho[None], self.u, self.E, self.B])

    @classmethod
    def from_stacked(cls, arr, box_len, time=0.0, gamma=DEFAULT_GAMMA) -> "GridField":
        arr = np.asarray(arr, dtype=float)
        return cls(arr.shape[-1], box_len, arr[0].copy(), arr[1:4].copy(), arr[4:7].copy(),
                   arr[7:10].copy(), time, gamma)

    def zeros_like(self) -> "GridField":
        return GridField.from_stacked(np.zeros_like(self.stacked()), self.box_len, self.time,
                                      self.gamma)

    def check_density(self) -> None:
        if np.min(self.rho) <= -1.0:
            raise DensityCollapse(f"min(1 + rho) = {1 + np.min(self.rho):.3e} at t={self.time}")


@dataclass
class SymmetricField:
    """[sigma, v, E~, B~] on the grid; ``time`` is the rescaled time sqrt(gamma) t."""

    n_grid: int
    box_len: float
    sigma: np.ndarray
    v: np.ndarray
    E: np.ndarray
    B: np.ndarray
    time: float
    gamma: float

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.sigma[None], self.v, self.E, self.B])


@dataclass
class EnergyReport:
    full_energy: float
    dissipation: float
    high_order_energy: float
    high_order_dissipation: float
    sobolev_norms: dict  # order j -> sum over |alpha| = j of ||d^alpha V||^2
    N: int
    kappa: KappaWeights = field(default_factory=lambda: DEFAULT_KAPPA)


# ---------------------------------------------------------------------------
# grid geometry


@dataclass(frozen=True)
class Grid:
    n: int
    box_len: float
    k: np.ndarray  # (n, n, n//2 + 1, 3) wavevectors 2 pi m / L
    mask: np.ndarray  # retained modes under the 2/3 rule
    weight: np.ndarray  # 1 or 2: multiplicity of an rfft coefficient in the full spectrum

    @property
    def shape(self):
        return (self.n, self.n, self.n)

    @property
    def cell_volume(self):
        return (self.box_len / self.n) ** 3

    def rfft(self, f):
        return sp_fft.rfftn(f, axes=(-3, -2, -1), workers=-1)

    def irfft(self, fh):
        return sp_fft.irfftn(fh, s=self.shape, axes=(-3, -2, -1), workers=-1)

    def integral(self, dens_hat_sq):
        """int over the box of sum |f|^2 given |f^|^2 summed over components (rfft layout)."""
        return self.box_len**3 / self.n**6 * float(np.sum(self.weight * dens_hat_sq))

    def inner(self, fh, gh):
        """Real inner product <f, g> of real fields from their rfft coefficients."""
        prod = np.real(fh * np.conj(gh))
        if prod.ndim > 3:
            prod = prod.sum(axis=tuple(range(prod.ndim - 3)))
        return self.box_len**3 / self.n**6 * float(np.sum(self.weight * prod))


@lru_cache(maxsize=16)
def make_grid(n: int, box_len: float) -> Grid:
    m = np.fft.fftfreq(n, 1.0 / n)
    mz = np.fft.rfftfreq(n, 1.0 / n)
    MX, MY, MZ = np.meshgrid(m, m, mz, indexing="ij")
    k = (2 * np.pi / box_len) * np.stack([MX, MY, MZ], axis=-1)
    cut = n // 3
    mask = (np.abs(MX) <= cut) & (np.abs(MY) <= cut) & (np.abs(MZ) <= cut)
    weight = np.full(MZ.shape, 2.0)
    weight[..., 0] = 1.0
    if n % 2 == 0:
        weight[..., -1] = 1.0
    k.setflags(write=False)
    mask.setflags(write=False)
    weight.setflags(write=False)
    return Grid(n, float(box_len), k, mask, weight)


def grid_of(f) -> Grid:
    return make_grid(f.n_grid, f.box_len)


def to_spectral(f: GridField) -> np.ndarray:
    """Packed spectral state, shape (n, n, n//2 + 1, 10)."""
    g = grid_of(f)
    return np.moveaxis(g.rfft(f.stacked()), 0, -1)


def from_spectral(yh, like: GridField, time=None) -> GridField:
    g = grid_of(like)
    arr = g.irfft(np.moveaxis(yh, -1, 0))
    return GridField.from_stacked(arr, like.box_len, like.time if time is None else time,
                                  like.gamma)


# ---------------------------------------------------------------------------
# pointwise pieces


def phi_sigma(sigma, gamma: float = DEFAULT_GAMMA):
    """((gamma-1) sigma / 2 + 1)^{2/(gamma-1)} - sigma - 1."""
    base = 0.5 * (gamma - 1) * np.asarray(sigma, dtype=float) + 1.0
    if np.any(base <= 0):
        raise DensityCollapse("(gamma-1) sigma / 2 + 1 must be positive")
    return base ** (2.0 / (gamma - 1)) - sigma - 1.0


def transform_to_symmetric(f: GridField) -> SymmetricField:
    """sigma = 2/(gamma-1) ((1+rho)^{(gamma-1)/2} - 1); v, E~, B~ = u, E, B / sqrt(gamma)."""
    f.check_density()
    g = f.gamma
    sg = np.sqrt(g)
    sigma = 2.0 / (g - 1) * ((1.0 + f.rho) ** (0.5 * (g - 1)) - 1.0)
    return SymmetricField(f.n_grid, f.box_len, sigma, f.u / sg, f.E / sg, f.B / sg,
                          sg * f.time, g)


def transform_from_symmetric(s: SymmetricField) -> GridField:
    g = s.gamma
    base = 0.5 * (g - 1) * s.sigma + 1.0
    if np.any(base <= 0):
        raise DensityCollapse("(gamma-1) sigma / 2 + 1 must be positive")
    sg = np.sqrt(g)
    rho = base ** (2.0 / (g - 1)) - 1.0
    return GridField(s.n_grid, s.box_len, rho, sg * s.v, sg * s.E, sg * s.B, s.time / sg, g)


# ---------------------------------------------------------------------------
# sources


def _grad(g: Grid, fh):
    """Spectral gradient, appended axis 0: (3, ...)."""
    return g.irfft(1j * np.moveaxis(g.k, -1, 0) * fh[None])


def sources_spectral(g: Grid, yh, gamma: float) -> np.ndarray:
    """Dealiased nonlinear sources [g1, g2, g3, 0] in packed spectral layout."""
    yh = yh * g.mask[..., None]
    rho = g.irfft(yh[..., RHO])
    u = g.irfft(np.moveaxis(yh[..., U], -1, 0))
    bb = g.irfft(np.moveaxis(yh[..., B], -1, 0))
    grad_rho = _grad(g, yh[..., RHO])
    # grad_u[i, j] = d_j u_i
    grad_u = np.stack([_grad(g, yh[..., U][..., i]) for i in range(3)])

    rho_u_h = np.moveaxis(g.rfft(rho[None] * u), 0, -1) * g.mask[..., None]
    adv = np.einsum("j...,ij...->i...", u, grad_u)
    lorentz = np.cross(u, bb, axis=0)
    pressure = gamma * ((1.0 + rho) ** (gamma - 2) - 1.0)
    g2 = -adv - lorentz - pressure[None] * grad_rho

    out = np.zeros_like(yh)
    out[..., RHO] = -1j * np.einsum("...i,...i->...", g.k, rho_u_h)
    out[..., U] = np.moveaxis(g.rfft(g2), 0, -1) * g.mask[..., None]
    out[..., E] = rho_u_h
    return out


def nonlinear_sources(f: GridField):
    """(g1, g2, g3) on the grid: -div(rho u), the momentum sources, and rho u."""
    f.check_density()
    g = grid_of(f)
    sh = sources_spectral(g, to_spectral(f), f.gamma)
    g1 = g.irfft(sh[..., RHO])
    g2 = g.irfft(np.moveaxis(sh[..., U], -1, 0))
    g3 = g.irfft(np.moveaxis(sh[..., E], -1, 0))
    return g1, g2, g3


def linear_rhs(g: Grid, yh, gamma: float) -> np.ndarray:
    """L(k) y per mode."""
    k = g.k
    out = np.zeros_like(yh)
    rho, u, ee, bb = yh[..., RHO], yh[..., U], yh[..., E], yh[..., B]
    out[..., RHO] = -1j * np.einsum("...i,...i->...", k, u)
    out[..., U] = -1j * gamma * k * rho[..., None] - ee - u
    out[..., E] = 1j * np.cross(k, bb) + u
    out[..., B] = -1j * np.cross(k, ee)
    return out


# ---------------------------------------------------------------------------
# stepping


def stable_dt(n: int, box_len: float, gamma: float = DEFAULT_GAMMA, cfl: float = DEFAULT_CFL):
    """cfl / (|k|_max max(sqrt(gamma), 1)) over the retained modes."""
    kmax = (2 * np.pi / box_len) * (n // 3) * np.sqrt(3.0)
    return cfl / (kmax * max(np.sqrt(gamma), 1.0))


@lru_cache(maxsize=8)
def _linear_matrices(n: int, box_len: float, gamma: float, t: float) -> np.ndarray:
    """e^{tL(k)} P(k) for the retained modes in ``mask`` order, (n_modes, 10, 10)."""
    g = make_grid(n, box_len)
    k = g.k[g.mask]
    eye = np.eye(NCOMP, dtype=complex)
    cols = []
    for j in range(NCOMP):
        pj = project_compatible(k, np.broadcast_to(eye[j], (len(k), NCOMP)))
        cols.append(propagate_arrays(t, k, pj, gamma))
    mats = np.stack(cols, axis=-1)
    mats.setflags(write=False)
    return mats


def _apply(mats, yh):
    return (mats @ yh[..., None])[..., 0]


def step_spectral(g: Grid, yh, dt: float, gamma: float, nonlinear: bool = True) -> np.ndarray:
    """One Strang step on the packed spectral state; modes outside the mask are zeroed."""
    half = _linear_matrices(g.n, g.box_len, gamma, 0.5 * dt)
    out = np.zeros_like(yh)
    out[g.mask] = _apply(half, yh[g.mask])
    if nonlinear:
        mid = out + 0.5 * dt * sources_spectral(g, out, gamma)
        out = out + dt * sources_spectral(g, mid, gamma)
    km = g.k[g.mask]
    out[g.mask] = project_compatible(km, _apply(half, out[g.mask]))
    out[~g.mask] = 0.0
    return out


def step(f: GridField, dt: float, cfl: float = DEFAULT_CFL) -> GridField:
    """One Strang step of size dt."""
    limit = stable_dt(f.n_grid, f.box_len, f.gamma, cfl)
    if dt > limit * (1 + 1e-12):
        raise CFLViolation(f"dt={dt} exceeds the stability limit {limit}")
    f.check_density()
    g = grid_of(f)
    yh = step_spectral(g, to_spectral(f), dt, f.gamma)
    out = from_spectral(yh, f, f.time + dt)
    out.check_density()
    return out


def evolve(f: GridField, dt: float, n_steps: int, nonlinear: bool = True) -> GridField:
    """n_steps steps staying in spectral space between steps."""
    g = grid_of(f)
    yh = to_spectral(f)
    for _ in range(n_steps):
        yh = step_spectral(g, yh, dt, f.gamma, nonlinear)
    out = from_spectral(yh, f, f.time + n_steps * dt)
    out.check_density()
    return out


def propagate_linear(f: GridField, t: float) -> GridField:
    """Exact linear evolution of every retained mode over time t."""
    g = grid_of(f)
    yh = to_spectral(f) * g.mask[..., None]
    k = g.k[g.mask]
    out = np.zeros_like(yh)
    out[g.mask] = propagate_arrays(t, k, project_compatible(k, yh[g.mask]), f.gamma)
    return from_spectral(out, f, f.time + t)


# ---------------------------------------------------------------------------
# diagnostics


def constraint_residual(f: GridField) -> tuple[float, float]:
    """Box L2 norms of div E + rho and div B."""
    g = grid_of(f)
    yh = to_spectral(f)
    gauss = 1j * np.einsum("...i,...i->...", g.k, yh[..., E]) + yh[..., RHO]
    divb = 1j * np.einsum("...i,...i->...", g.k, yh[..., B])
    return (np.sqrt(g.integral(np.abs(gauss) ** 2)), np.sqrt(g.integral(np.abs(divb) ** 2)))


def component_norms(f: GridField) -> dict:
    """Box L2 norms of rho, u, E, B."""
    dx3 = (f.box_len / f.n_grid) ** 3
    return {name: float(np.sqrt(dx3 * np.sum(arr**2)))
            for name, arr in (("rho", f.rho), ("u", f.u), ("E", f.E), ("B", f.B))}


def l2_norm(f: GridField) -> float:
    dx3 = (f.box_len / f.n_grid) ** 3
    return float(np.sqrt(dx3 * np.sum(f.stacked() ** 2)))


def _multiindices(order):
    return [a for a in itertools.product(range(order + 1), repeat=3) if sum(a) == order]


def derivative_weight(k, lo: int, hi: int):
    """sum over lo <= |alpha| <= hi of prod k_i^{2 alpha_i}; zero when hi < lo."""
    k2 = np.square(k)
    w = np.zeros(k.shape[:-1])
    for order in range(max(lo, 0), hi + 1):
        for a in _multiindices(order):
            w = w + k2[..., 0] ** a[0] * k2[..., 1] ** a[1] * k2[..., 2] ** a[2]
    return w


@lru_cache(maxsize=64)
def _grid_weight(n: int, box_len: float, lo: int, hi: int) -> np.ndarray:
    w = derivative_weight(make_grid(n, box_len).k, lo, hi)
    w.setflags(write=False)
    return w


def _energy_from_spectral(g: Grid, vh, N: int, kappa: KappaWeights) -> EnergyReport:
    """Energy report from the packed rfft coefficients of [sigma, v, E~, B~]."""
    k = g.k
    k2 = np.einsum("...i,...i->...", k, k)
    sig, v, ee, bb = vh[..., 0], vh[..., 1:4], vh[..., 4:7], vh[..., 7:10]

    def sq(x):
        return np.sum(np.abs(x) ** 2, axis=-1)

    all_sq = sq(vh)
    fluid_sq = np.abs(sig) ** 2 + sq(v)
    field_sq = sq(ee) + sq(bb)

    def W(lo, hi):
        return _grid_weight(g.n, g.box_len, lo, hi)

    def hnorm(dens, lo, hi):
        return g.integral(W(lo, hi) * dens)

    def grad_norm(dens, m):
        # ||grad f||_m^2 = sum_{|alpha|<=m} sum_i ||d^alpha d_i f||^2
        return g.integral(k2 * W(0, m) * dens) if m >= 0 else 0.0

    def re_inner(weight, a, b):
        return g.integral(weight * np.real(np.sum(a * np.conj(b), axis=-1)))

    def interactive(lo, hi):
        if hi < lo:
            return 0.0, 0.0, 0.0
        w1 = W(lo, hi)
        i1 = re_inner(w1, 1j * k * sig[..., None], v)
        i2 = re_inner(w1, v, ee)
        i3 = re_inner(W(lo, hi - 1), 1j * np.cross(k, ee), bb) if hi - 1 >= lo else 0.0
        return i1, i2, i3

    k1, k2w, k3 = kappa.as_tuple()
    i1, i2, i3 = interactive(0, N - 1)
    full = hnorm(all_sq, 0, N) + k1 * i1 + k2w * i2 + k3 * i3
    h1, h2, h3 = interactive(1, N - 1)
    high = grad_norm(all_sq, N - 1) + k1 * h1 + k2w * h2 + k3 * h3
    diss = hnorm(fluid_sq, 0, N) + grad_norm(field_sq, N - 2) + g.integral(sq(ee))
    high_diss = grad_norm(fluid_sq, N - 1) + grad_norm(field_sq, N - 2)
    table = {j: hnorm(all_sq, j, j) for j in range(N + 1)}
    return EnergyReport(full, diss, high, high_diss, table, N, kappa)


def energy_functionals(s: SymmetricField, N: int = DEFAULT_ORDER,
                       kappa: KappaWeights = DEFAULT_KAPPA) -> EnergyReport:
    """Full and high-order energies and dissipation rates of a symmetric field.

    Sobolev norms and the interactive terms are lattice integrals of the
    spectral coefficients, with d^alpha acting as multiplication by (ik)^alpha.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    g = make_grid(s.n_grid, s.box_len)
    vh = np.moveaxis(g.rfft(s.stacked()), 0, -1)
    return _energy_from_spectral(g, vh, N, kappa)


def symmetric_residual(f: GridField, projected: bool = True) -> float:
    """Relative residual of the symmetric-variable equations at the state f.

    Time derivatives come from the spectral right-hand side of the evolved
    system and the chain rule; the symmetric equations are then evaluated with
    spectral derivatives and pointwise products.  Returns
    ||residual|| / ||d_s V|| in the box L2 norm.

    With ``projected`` the residual is restricted to the retained modes, which
    is what the dealiased scheme solves; otherwise the modes discarded by the
    2/3 rule are counted too.
    """
    f.check_density()
    g = grid_of(f)
    gam = f.gamma
    sg = np.sqrt(gam)
    yh = to_spectral(f)
    dyh = linear_rhs(g, yh, gam) + sources_spectral(g, yh, gam)
    dy = g.irfft(np.moveaxis(dyh, -1, 0))
    s = transform_to_symmetric(f)
    # d/ds = (1/sqrt(gamma)) d/dt
    ds_sigma = (1.0 + f.rho) ** (0.5 * (gam - 3)) * dy[0] / sg
    ds_v, ds_e, ds_b = dy[1:4] / gam, dy[4:7] / gam, dy[7:10] / gam

    sig_h = g.rfft(s.sigma)
    grad_sig = _grad(g, sig_h)
    vh = g.rfft(s.v)
    grad_v = np.stack([_grad(g, vh[i]) for i in range(3)])
    div_v = np.einsum("ii...->...", grad_v)
    eh, bh = g.rfft(s.E), g.rfft(s.B)
    kk = np.moveaxis(g.k, -1, 0)
    curl_e = g.irfft(1j * np.cross(kk, eh, axis=0))
    curl_b = g.irfft(1j * np.cross(kk, bh, axis=0))
    a = 0.5 * (gam - 1) * s.sigma + 1.0
    phi = phi_sigma(s.sigma, gam)

    r_sigma = ds_sigma + np.einsum("i...,i...->...", s.v, grad_sig) + a * div_v
    r_v = (ds_v + np.einsum("j...,ij...->i...", s.v, grad_v) + a * grad_sig
           + s.E / sg + np.cross(s.v, s.B, axis=0) + s.v / sg)
    r_e = ds_e - curl_b / sg - s.v / sg - (s.sigma + phi) * s.v / sg
    r_b = ds_b + curl_e / sg
    res = np.concatenate([r_sigma[None], r_v, r_e, r_b])
    ref = np.concatenate([ds_sigma[None], ds_v, ds_e, ds_b])
    if projected:
        res = g.irfft(g.rfft(res) * g.mask)
    return float(np.sqrt(np.sum(res**2) / np.sum(ref**2)))


# ---------------------------------------------------------------------------
# data and output


def random_initial_field(n: int = DEFAULT_N, box_len: float = DEFAULT_BOX,
                         amplitude: float = 1e-2, seed: int = 0, gamma: float = DEFAULT_GAMMA,
                         mode_cutoff: int = 4) -> GridField:
    """Smooth compatible random data with box L2 norm ``amplitude``.

    Coefficients of u, E and B are complex Gaussians on the modes with
    |m_i| <= mode_cutoff under a Gaussian envelope; rho is then set from
    Gauss's law and B made divergence-free.  The k = 0 modes are zero.
    """
    g = make_grid(n, box_len)
    rng = np.random.default_rng(seed)
    m = g.k * box_len / (2 * np.pi)
    keep = np.all(np.abs(m) <= min(mode_cutoff, n // 3), axis=-1)
    keep &= np.any(m != 0, axis=-1)
    env = np.exp(-np.sum(m**2, axis=-1) / (2.0 * max(mode_cutoff, 1) ** 2 / 4))
    yh = np.zeros(g.mask.shape + (NCOMP,), dtype=complex)
    for sl in (U, E, B):
        shape = g.mask.shape + (3,)
        coef = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        yh[..., sl] = coef * (env * keep)[..., None]
    yh = project_compatible(g.k, yh)
    # round trip through real space enforces the conjugate symmetry of the kz = 0 plane
    arr = g.irfft(np.moveaxis(yh, -1, 0))
    arr *= amplitude / np.sqrt(g.cell_volume * np.sum(arr**2))
    f = GridField.from_stacked(arr, box_len, 0.0, gamma)
    # re-project in case the symmetrisation broke the constraints at round-off
    out = from_spectral(project_compatible(g.k, to_spectral(f)) * g.mask[..., None], f)
    out.check_density()
    return out


SNAPSHOT_MAGIC = b"EMSNAP01"
_SNAP_HEADER = struct.Struct("<8s3i3d")


def write_snapshot(path, f: GridField) -> None:
    """Flat little-endian binary snapshot.

    Layout: 8-byte magic ``EMSNAP01``; three int32 grid dimensions; float64
    box length, time and gamma; then ten float64 fields of n^3 values each in
    C order, components rho, u_x, u_y, u_z, E_x, E_y, E_z, B_x, B_y, B_z.
    """
    n = f.n_grid
    header = _SNAP_HEADER.pack(SNAPSHOT_MAGIC, n, n, n, f.box_len, f.time, f.gamma)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.stacked(), dtype="<f8").tobytes())


def read_snapshot(path) -> GridField:
    raw = Path(path).read_bytes()
    magic, nx, ny, nz, box_len, time, gamma = _SNAP_HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a snapshot file")
    arr = np.frombuffer(raw, dtype="<f8", offset=_SNAP_HEADER.size).reshape(NCOMP, nx, ny, nz)
    return GridField.from_stacked(arr, box_len, time, gamma)


SERIES_COLUMNS = ("step", "t", "E_N", "D_N", "E_N_h", "D_N_h", "gauss_residual",
                  "divB_residual", "L2_rho", "L2_u", "L2_E", "L2_B")


@dataclass
class SimulationResult:
    final: GridField
    rows: list  # tuples in SERIES_COLUMNS order
    dt: float
    energy0: float

    def column(self, name) -> np.ndarray:
        i = SERIES_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])

    def max_energy_increase(self) -> float:
        """Largest per-step increase of E_N divided by E_N at t = 0."""
        e = self.column("E_N")
        return float(np.max(np.diff(e)) / self.energy0) if len(e) > 1 else 0.0

    def constraint_growth(self) -> float:
        g = self.column("gauss_residual")
        b = self.column("divB_residual")
        return float(max(np.max(g) - g[0], np.max(b) - b[0]))

    def fitted_lambda(self) -> float:
        """Largest lam with E_N(t) + lam * sum D_N dt <= E_N(0) at every recorded row."""
        e = self.column("E_N")
        d = self.column("D_N")
        t = self.column("t")
        # trapezoid in time between recorded rows
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (d[1:] + d[:-1]) * np.diff(t))])
        ok = cum > 0
        if not np.any(ok):
            return 0.0
        return float(np.min((e[0] - e[ok]) / cum[ok]))


def _row(step_i, g: Grid, yh, t, gamma, N, kappa):
    """Diagnostics row computed from the spectral state; only sigma needs real space."""
    rho = g.irfft(yh[..., RHO])
    if np.min(rho) <= -1.0:
        raise DensityCollapse(f"min(1 + rho) = {1 + np.min(rho):.3e} at t={t}")
    sigma = 2.0 / (gamma - 1) * ((1.0 + rho) ** (0.5 * (gamma - 1)) - 1.0)
    vh = yh / np.sqrt(gamma)
    vh[..., RHO] = g.rfft(sigma)
    rep = _energy_from_spectral(g, vh, N, kappa)
    gauss = 1j * np.einsum("...i,...i->...", g.k, yh[..., E]) + yh[..., RHO]
    divb = 1j * np.einsum("...i,...i->...", g.k, yh[..., B])
    sq = np.abs(yh) ** 2
    nrm = [np.sqrt(g.integral(sq[..., RHO]))]
    nrm += [np.sqrt(g.integral(np.sum(sq[..., sl], axis=-1))) for sl in (U, E, B)]
    return (step_i, t, rep.full_energy, rep.dissipation, rep.high_order_energy,
            rep.high_order_dissipation, np.sqrt(g.integral(np.abs(gauss) ** 2)),
            np.sqrt(g.integral(np.abs(divb) ** 2)), *nrm)


def simulate(f0: GridField, n_steps: int, dt: float | None = None, *, N: int = DEFAULT_ORDER,
             kappa: KappaWeights = DEFAULT_KAPPA, every: int = 1, cfl: float = DEFAULT_CFL,
             snapshot_dir=None, snapshot_every: int = 0) -> SimulationResult:
    """Run ``n_steps`` Strang steps recording diagnostics every ``every`` steps."""
    if dt is None:
        dt = stable_dt(f0.n_grid, f0.box_len, f0.gamma, cfl)
    elif dt > stable_dt(f0.n_grid, f0.box_len, f0.gamma, cfl) * (1 + 1e-12):
        raise CFLViolation(f"dt={dt} exceeds the stability limit")
    g = grid_of(f0)
    f0.check_density()
    yh = to_spectral(f0)
    rows = [_row(0, g, yh, f0.time, f0.gamma, N, kappa)]
    for i in range(1, n_steps + 1):
        yh = step_spectral(g, yh, dt, f0.gamma)
        t = f0.time + i * dt
        if i % every == 0 or i == n_steps:
            rows.append(_row(i, g, yh, t, f0.gamma, N, kappa))
        if snapshot_dir is not None and snapshot_every and i % snapshot_every == 0:
            write_snapshot(Path(snapshot_dir) / f"snapshot_{i:06d}.bin", from_spectral(yh, f0, t))
    f = from_spectral(yh, f0, f0.time + n_steps * dt)
    return SimulationResult(f, rows, dt, rows[0][2])


def convergence_order(f0: GridField, t_end: float, dt: float, levels: int = 3) -> float:
    """Observed order from successive dt halvings: log2 of the ratio of successive differences."""
    sols = []
    for j in range(levels):
        h = dt / 2**j
        sols.append(evolve(f0, h, int(round(t_end / h))).stacked())
    diffs = [np.sqrt(np.sum((sols[j] - sols[j + 1]) ** 2)) for j in range(levels - 1)]
    orders = [np.log2(diffs[j] / diffs[j + 1]) for j in range(len(diffs) - 1)]
    return float(min(orders))

"""Exact linear solution operator of the Euler-Maxwell system in frequency space.

States at a wavevector ``k`` are packed as 10 complex numbers
``[rho, u_x, u_y, u_z, E_x, E_y, E_z, B_x, B_y, B_z]`` (see :data:`RHO`,
:data:`U`, :data:`E`, :data:`B`).  The batched functions take arrays of shape
``(..., 3)`` for wavevectors and ``(..., 10)`` for states, so a whole frequency
grid is propagated in one call.

Evolution splits into a longitudinal block (density plus the components of
velocity and electric field along ``k``), which is a damped oscillator with
frequency ``sqrt(3/4 + gamma |k|^2)``, and a transverse block (the parts of
``u``, ``E``, ``B`` orthogonal to ``k``) driven by the roots of the
characteristic cubic in :mod:`euler_maxwell.roots`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .roots import solve_characteristic

RHO = 0
U = slice(1, 4)
E = slice(4, 7)
B = slice(7, 10)
NCOMP = 10

DEFAULT_GAMMA = 5.0 / 3.0
# relative compatibility residual accepted by `propagate`
COMPAT_TOL = 1e-8
# below this |k| the closed forms lose digits; the ODE oracle is used instead
ORACLE_K = 1e-6


@dataclass
class SpectralState:
    """Fourier coefficients of [rho, u, E, B] at one wavevector."""

    k: np.ndarray
    rho: complex
    u: np.ndarray
    E: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=float).reshape(3)
        self.rho = complex(self.rho)
        self.u = np.asarray(self.u, dtype=complex).reshape(3)
        self.E = np.asarray(self.E, dtype=complex).reshape(3)
        self.B = np.asarray(self.B, dtype=complex).reshape(3)

    def to_array(self) -> np.ndarray:
        return np.concatenate([[self.rho], self.u, self.E, self.B])

    @classmethod
    def from_array(cls, k, y) -> "SpectralState":
        y = np.asarray(y, dtype=complex)
        return cls(k, y[RHO], y[U], y[E], y[B])

    def norm(self) -> float:
        return float(np.linalg.norm(self.to_array()))

    def constraint_residual(self) -> tuple[float, float]:
        """(|i k.E + rho|, |k.B|)."""
        return (abs(1j * self.k @ self.E + self.rho), abs(self.k @ self.B))


@dataclass
class ModeSplit:
    """Longitudinal part (rho, u_par, E_par) and transverse part (M1, M2, M3)."""

    k: np.ndarray
    rho: complex
    u_par: np.ndarray
    E_par: np.ndarray
    m: np.ndarray = field(repr=False)  # shape (3, 3): rows M1, M2, M3

    @property
    def longitudinal(self) -> np.ndarray:
        return np.concatenate([[self.rho], self.u_par, self.E_par])

    @property
    def transverse(self) -> np.ndarray:
        return self.m


@dataclass
class TransverseCoeffs:
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray


# ---------------------------------------------------------------------------
# batched kernels


def _kgeom(k):
    k = np.asarray(k, dtype=float)
    kmag = np.linalg.norm(k, axis=-1)
    return k, kmag


def _root_arrays(kmag):
    """(sigma, beta, omega) as arrays shaped like ``kmag``, scalars included."""
    sig, beta, omega = solve_characteristic(np.atleast_1d(kmag))
    shape = np.shape(kmag)
    return sig.reshape(shape), beta.reshape(shape), omega.reshape(shape)


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def compatibility_residual(k, y):
    """Batched (|i k.E + rho|, |k.B|)."""
    k = np.asarray(k, dtype=float)
    y = np.asarray(y)
    return np.abs(1j * _dot(k, y[..., E]) + y[..., RHO]), np.abs(_dot(k, y[..., B]))


def project_compatible(k, y):
    """Overwrite rho by -i k.E and remove the k-parallel part of B (k = 0: rho = 0)."""
    k, kmag = _kgeom(k)
    y = np.array(y, dtype=complex, copy=True)
    y[..., RHO] = -1j * _dot(k, y[..., E])
    with np.errstate(invalid="ignore", divide="ignore"):
        kh = np.where(kmag[..., None] > 0, k / kmag[..., None], 0.0)
    y[..., B] -= kh * _dot(kh, y[..., B])[..., None]
    return y


def split_arrays(k, y):
    """Return (rho, a, e, m1, m2, m3) with a = k~.u, e = k~.E and m_i transverse parts."""
    k, kmag = _kgeom(k)
    kh = k / kmag[..., None]
    u, ee, bb = y[..., U], y[..., E], y[..., B]
    a = _dot(kh, u)
    e = _dot(kh, ee)
    m1 = u - kh * a[..., None]
    m2 = ee - kh * e[..., None]
    m3 = bb - kh * _dot(kh, bb)[..., None]
    return y[..., RHO], a, e, m1, m2, m3


def _cross_ik(k, v):
    """i k x v for batched complex vectors."""
    return 1j * np.cross(np.broadcast_to(k, v.shape), v)


def longitudinal_scalars(t, kmag, rho0, a0, e0, gamma):
    """Evolve (rho, k~.u, k~.E) by the damped-oscillator closed form."""
    theta = np.sqrt(0.75 + gamma * kmag**2)
    damp = np.exp(-0.5 * t)
    c = damp * np.cos(theta * t)
    s = damp * np.sin(theta * t) / theta
    rho = c * rho0 + s * (0.5 * rho0 - 1j * kmag * a0)
    a = c * a0 + s * (-1j * gamma * kmag * rho0 - 0.5 * a0 - e0)
    e = c * e0 + s * (a0 + 0.5 * e0)
    return rho, a, e


def transverse_coeff_arrays(k, m1, m2, m3):
    """Batched c1, c2, c3 of the M2 ansatz, from the simplified closed form."""
    k, kmag = _kgeom(k)
    sigma, _, omega = _root_arrays(kmag)
    k2 = kmag**2
    den = 3.0 * sigma**2 + 2.0 * sigma + 1.0 + k2
    curl3 = _cross_ik(k, m3)
    sp1 = sigma + 1.0
    s_ = sigma[..., None]
    c1 = (s_ * m1 + (sigma * sp1)[..., None] * m2 + sp1[..., None] * curl3) / den[..., None]
    c2 = (-s_ * m1 + (2.0 * sigma**2 + sigma + k2 + 1.0)[..., None] * m2
          - sp1[..., None] * curl3) / den[..., None]
    w1 = (1.5 * sigma**2 + 1.5 * sigma + 1.0 + k2) / omega
    w2 = sp1 * (sp1 + k2) / (2.0 * omega)
    w3 = (1.5 * sigma**2 + 0.5 + k2) / omega
    c3 = (w1[..., None] * m1 + w2[..., None] * m2 + w3[..., None] * curl3) / den[..., None]
    return c1, c2, c3


def transverse_arrays(t, k, m1, m2, m3):
    """Batched (M1, M2, M3)(t) by the exponential-trigonometric representation."""
    k, kmag = _kgeom(k)
    sigma, beta, omega = _root_arrays(kmag)
    c1, c2, c3 = transverse_coeff_arrays(k, m1, m2, m3)
    es = np.exp(sigma * t)[..., None]
    eb = np.exp(beta * t)
    cw = (eb * np.cos(omega * t))[..., None]
    sw = (eb * np.sin(omega * t))[..., None]
    b_, w_ = beta[..., None], omega[..., None]

    m2t = c1 * es + c2 * cw + c3 * sw

    q1 = ((1.0 + beta) ** 2 + omega**2)[..., None]
    m1t = (-c1 / (1.0 + sigma)[..., None] * es
           - c2 / q1 * ((1.0 + b_) * cw + w_ * sw)
           - c3 / q1 * ((1.0 + b_) * sw - w_ * cw))

    q3 = (beta**2 + omega**2)[..., None]
    inner = (c1 / sigma[..., None] * es
             + c2 / q3 * (b_ * cw + w_ * sw)
             + c3 / q3 * (b_ * sw - w_ * cw))
    m3t = -_cross_ik(k, inner)
    return m1t, m2t, m3t


def cancellation_residuals(k, m1, m2, m3):
    """(M1_0 + c4, M3_0 + i k x c5); both vanish identically."""
    k, kmag = _kgeom(k)
    sigma, beta, omega = _root_arrays(kmag)
    c1, c2, c3 = transverse_coeff_arrays(k, m1, m2, m3)
    q1 = (1.0 + beta) ** 2 + omega**2
    c4 = (q1[..., None] * c1 + ((1 + beta) * (1 + sigma))[..., None] * c2
          - (omega * (1 + sigma))[..., None] * c3) / ((1 + sigma) * q1)[..., None]
    q3 = beta**2 + omega**2
    c5 = (q3[..., None] * c1 + (sigma * beta)[..., None] * c2
          - (sigma * omega)[..., None] * c3) / (sigma * q3)[..., None]
    return m1 + c4, m3 + _cross_ik(k, c5)


def zero_mode_arrays(t, y):
    """k = 0 evolution: B frozen, (u, E) rotate under [[-1, -1], [1, 0]]."""
    y = np.asarray(y, dtype=complex)
    out = np.zeros_like(y)
    theta = np.sqrt(0.75)
    damp = np.exp(-0.5 * t)
    c = damp * np.cos(theta * t)
    s = damp * np.sin(theta * t) / theta
    u0, e0 = y[..., U], y[..., E]
    out[..., U] = c * u0 + s * (-0.5 * u0 - e0)
    out[..., E] = c * e0 + s * (u0 + 0.5 * e0)
    out[..., B] = y[..., B]
    return out


def propagate_arrays(t, k, y, gamma=DEFAULT_GAMMA):
    """Batched e^{tL} on compatible states; k = 0 entries use the zero-mode form.

    No compatibility check is made here: incompatible input yields the
    propagation of an unspecified compatible projection.
    """
    k = np.asarray(k, dtype=float)
    y = np.asarray(y, dtype=complex)
    out = np.empty(np.broadcast_shapes(k.shape[:-1], y.shape[:-1]) + (NCOMP,), dtype=complex)
    k = np.broadcast_to(k, out.shape[:-1] + (3,))
    y = np.broadcast_to(y, out.shape)
    kmag = np.linalg.norm(k, axis=-1)
    zero = kmag == 0
    if np.any(zero):
        out[zero] = zero_mode_arrays(t, y[zero])
    nz = ~zero
    if np.any(nz):
        kk, yy = k[nz], y[nz]
        km = kmag[nz]
        kh = kk / km[..., None]
        rho0, a0, e0, m10, m20, m30 = split_arrays(kk, yy)
        rho, a, e = longitudinal_scalars(t, km, rho0, a0, e0, gamma)
        m1, m2, m3 = transverse_arrays(t, kk, m10, m20, m30)
        res = np.empty_like(yy)
        res[..., RHO] = rho
        res[..., U] = kh * a[..., None] + m1
        res[..., E] = kh * e[..., None] + m2
        res[..., B] = m3
        out[nz] = res
    return out


# ---------------------------------------------------------------------------
# single-mode API


def helmholtz_split(state: SpectralState) -> ModeSplit:
    kmag = np.linalg.norm(state.k)
    if kmag == 0:
        raise ValueError("helmholtz_split needs |k| > 0; use zero_mode_evolve at k = 0")
    kh = state.k / kmag
    rho, a, e, m1, m2, m3 = split_arrays(state.k, state.to_array())
    return ModeSplit(state.k.copy(), complex(rho), kh * a, kh * e, np.stack([m1, m2, m3]))


def helmholtz_merge(split: ModeSplit) -> SpectralState:
    m1, m2, m3 = split.m
    return SpectralState(split.k, split.rho, split.u_par + m1, split.E_par + m2, m3)


def longitudinal_matrix(t: float, k, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """7x7 longitudinal propagator acting on (rho, u_par, E_par).

    Valid on compatible data, where rho = -i k.E_par.
    """
    k, kmag = _kgeom(k)
    if kmag == 0:
        raise ValueError("longitudinal_matrix needs |k| > 0")
    theta = np.sqrt(0.75 + gamma * kmag**2)
    gen = np.zeros((7, 7), dtype=complex)
    gen[0, 0] = 0.5
    gen[0, 1:4] = -1j * k
    gen[1:4, 0] = -1j * gamma * k
    gen[1:4, 1:4] = -0.5 * np.eye(3)
    gen[1:4, 4:7] = -np.eye(3)
    gen[4:7, 1:4] = np.eye(3)
    gen[4:7, 4:7] = 0.5 * np.eye(3)
    damp = np.exp(-0.5 * t)
    return damp * (np.cos(theta * t) * np.eye(7) + np.sin(theta * t) / theta * gen)


def transverse_coefficients(k, m0) -> TransverseCoeffs:
    m0 = np.asarray(m0, dtype=complex)
    c1, c2, c3 = transverse_coeff_arrays(np.asarray(k, float), m0[0], m0[1], m0[2])
    return TransverseCoeffs(c1, c2, c3)


def transverse_evolve(t: float, k, m0, tol: float = 1e-10) -> np.ndarray:
    """Transverse triple at time t, shape (3, 3) with rows M1, M2, M3."""
    if t < 0:
        raise ValueError("t must be non-negative")
    k = np.asarray(k, dtype=float)
    m0 = np.asarray(m0, dtype=complex)
    kmag = np.linalg.norm(k)
    if kmag == 0:
        raise ValueError("transverse_evolve needs |k| > 0")
    if kmag < ORACLE_K:
        from .oracle import integrate_transverse

        return integrate_transverse(k, m0, t, tol=tol).states[-1]
    return np.stack(transverse_arrays(t, k, m0[0], m0[1], m0[2]))


def check_compatible(state: SpectralState, tol: float = COMPAT_TOL) -> None:
    r_e, r_b = state.constraint_residual()
    scale = (1.0 + np.linalg.norm(state.k)) * max(state.norm(), np.finfo(float).tiny)
    if r_e > tol * scale or r_b > tol * scale:
        raise ValueError(
            f"incompatible state: |ik.E + rho| = {r_e:.3e}, |k.B| = {r_b:.3e}")


def zero_mode_evolve(t: float, state0: SpectralState) -> SpectralState:
    if np.linalg.norm(state0.k) != 0:
        raise ValueError("zero_mode_evolve is only defined at k = 0")
    if abs(state0.rho) > COMPAT_TOL * max(state0.norm(), 1.0):
        raise ValueError("rho must vanish at k = 0 (Gauss law)")
    y = zero_mode_arrays(t, state0.to_array())
    return SpectralState.from_array(state0.k, y)


def propagate(t: float, state0: SpectralState, gamma: float = DEFAULT_GAMMA,
              tol: float = 1e-10) -> SpectralState:
    """Apply e^{tL} to one compatible mode."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if gamma <= 1:
        raise ValueError("gamma must exceed 1")
    kmag = np.linalg.norm(state0.k)
    if kmag == 0:
        return zero_mode_evolve(t, state0)
    check_compatible(state0)
    if kmag < ORACLE_K:
        from .oracle import integrate_linear

        return integrate_linear(state0.k, state0, t, tol=tol, gamma=gamma).final_state()
    y = propagate_arrays(t, state0.k, state0.to_array(), gamma)
    return SpectralState.from_array(state0.k, y)


def random_compatible(rng: np.random.Generator, k, scale: float = 1.0) -> np.ndarray:
    """Random compatible packed state(s) at wavevector(s) k, normalised to |y| = scale."""
    k = np.asarray(k, dtype=float)
    shape = k.shape[:-1] + (NCOMP,)
    y = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    y = project_compatible(k, y)
    return scale * y / np.linalg.norm(y, axis=-1, keepdims=True)

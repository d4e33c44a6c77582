"""Characteristic roots of the transverse electromagnetic subsystem.

The transverse field ``M2`` obeys a third-order ODE whose characteristic
polynomial is

    F(chi) = chi**3 + chi**2 + (1 + |k|**2) chi + |k|**2.

F is strictly increasing on the real line with F(-1) = -1 and F(0) = |k|**2,
so it has exactly one real root ``sigma`` in (-1, 0).  The remaining pair is
``beta +/- i omega`` with ``beta = -(sigma + 1)/2``.

All routines accept scalars or numpy arrays of wavenumber moduli.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this modulus the Newton residual floor exceeds the root itself.
SMALL_K = 1e-8
RESIDUAL_TOL = 1e-14
MAX_ITER = 200


@dataclass(frozen=True)
class CharTriple:
    """Root triple (sigma, beta, omega) of the characteristic cubic at |k|."""

    kmag: float
    sigma: float
    beta: float
    omega: float

    @property
    def residual(self) -> float:
        """|F(sigma)| normalised by (1 + |k|^2)."""
        return abs(eval_cubic(self.sigma, self.kmag)) / (1.0 + self.kmag**2)


def eval_cubic(chi, kmag):
    """Evaluate F(chi) for the wavenumber modulus ``kmag``."""
    k2 = np.square(kmag)
    return chi**3 + chi**2 + (1.0 + k2) * chi + k2


def _cubic_prime(chi, k2):
    return 3.0 * chi**2 + 2.0 * chi + 1.0 + k2


def real_root(kmag) -> np.ndarray:
    """Vectorised real root sigma(|k|) in (-1, 0).

    Safeguarded Newton iteration: steps leaving the current bracket are
    replaced by bisection, so convergence does not depend on the sign of F''.
    """
    kmag = np.asarray(kmag, dtype=float)
    if np.any(~np.isfinite(kmag)) or np.any(kmag <= 0):
        raise ValueError("wavenumber modulus must be positive and finite")
    k2 = kmag**2
    lo = np.full(kmag.shape, -1.0)
    hi = np.zeros(kmag.shape)
    x = np.clip(-k2 / (1.0 + k2), -1.0 + 1e-300, -1e-300)
    tol = RESIDUAL_TOL * (1.0 + k2)
    done = np.zeros(kmag.shape, dtype=bool)
    for _ in range(MAX_ITER):
        f = eval_cubic(x, kmag)
        # F is increasing: f < 0 means the root lies above x
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        done = np.abs(f) <= tol
        if np.all(done):
            break
        step = x - f / _cubic_prime(x, k2)
        outside = (step <= lo) | (step >= hi)
        nxt = np.where(outside, 0.5 * (lo + hi), step)
        stalled = (nxt == x) | (hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(x)))
        done |= stalled
        x = np.where(done, x, nxt)
        if np.all(done):
            break
    if np.any((lo > x) | (x > hi)):
        raise ArithmeticError("characteristic root left its bracket (-1, 0)")
    # the residual test is absolute; near |k| = 0 the root is O(|k|^2), so a
    # few extra Newton steps buy full relative precision
    for _ in range(3):
        step = x - eval_cubic(x, kmag) / _cubic_prime(x, k2)
        x = np.where((step > -1.0) & (step < 0.0), step, x)
    return x


def solve_characteristic(kmag):
    """Return the root triple at ``kmag``.

    A scalar input yields a :class:`CharTriple`; an array input yields a
    tuple ``(sigma, beta, omega)`` of arrays with the input's shape.
    """
    scalar = np.ndim(kmag) == 0
    k = np.atleast_1d(np.asarray(kmag, dtype=float))
    if np.any(k <= 0) or np.any(~np.isfinite(k)):
        raise ValueError("wavenumber modulus must be positive and finite")
    k2 = k**2
    tiny = k < SMALL_K
    sigma = np.empty_like(k)
    if np.any(tiny):
        sigma[tiny] = -k2[tiny]
    if np.any(~tiny):
        sigma[~tiny] = real_root(k[~tiny])
    beta = -0.5 * (sigma + 1.0)
    omega = 0.5 * np.sqrt(3.0 * sigma**2 + 2.0 * sigma + 3.0 + 4.0 * k2)
    if scalar:
        return CharTriple(float(k[0]), float(sigma[0]), float(beta[0]), float(omega[0]))
    shape = np.shape(kmag)
    return sigma.reshape(shape), beta.reshape(shape), omega.reshape(shape)


def sigma_derivative(kmag):
    """Closed-form d sigma / d|k| obtained by implicit differentiation of F."""
    k = np.asarray(kmag, dtype=float)
    sigma = solve_characteristic(k)[0] if np.ndim(k) else solve_characteristic(float(k)).sigma
    out = -2.0 * k * (1.0 + sigma) / (3.0 * sigma**2 + 2.0 * sigma + k**2 + 1.0)
    return float(out) if np.ndim(k) == 0 else out


def reconstruct_coefficients(sigma, beta, omega):
    """Coefficients (a2, a1, a0) of (chi - sigma)(chi - beta - i omega)(chi - beta + i omega)."""
    modsq = beta**2 + omega**2
    a2 = -(sigma + 2.0 * beta)
    a1 = modsq + 2.0 * beta * sigma
    a0 = -sigma * modsq
    return a2, a1, a0

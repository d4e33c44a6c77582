"""Time-frequency Lyapunov functional of the linear system and fitted decay bounds.

For a mode ``U = [rho, u, E, B]`` at wavevector ``k`` the functional is

    |[sqrt(g) rho, u, E, B]|^2
      + k1 Re(u | i k rho) / (1 + |k|^2)
      + k2 |k|^2 Re(u | E) / (1 + |k|^2)^2
      + k3 Re(-i k x B | E) / (1 + |k|^2)^2

with ``(a | b) = a . conj(b)``.  For small enough weights it is equivalent to
``|U|^2`` and decays at least like ``exp(-lam w(|k|) t)`` with
``w(|k|) = |k|^2 / (1 + |k|^2)^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .oracle import Trajectory, generator, solve_linear
from .propagator import (B, DEFAULT_GAMMA, E, RHO, U, SpectralState, propagate_arrays,
                         random_compatible)


@dataclass(frozen=True)
class KappaWeights:
    kappa1: float = 0.1
    kappa2: float = 0.01
    kappa3: float = 0.005

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.kappa1, self.kappa2, self.kappa3)

    def is_admissible(self) -> bool:
        """Ordering 0 < k3, k2^{3/2} < k3, k2 <= k1/10, k1 <= 1/2."""
        k1, k2, k3 = self.as_tuple()
        return k3 > 0 and k2 > 0 and k2**1.5 < k3 and k2 <= k1 / 10 and k1 <= 0.5


DEFAULT_KAPPA = KappaWeights()
ZERO_KAPPA = KappaWeights(0.0, 0.0, 0.0)


@dataclass
class BoundFit:
    C: float
    lambda_: float
    max_violation: float
    details: dict = field(default_factory=dict, repr=False)


def dissipation_weight(kmag):
    """w(|k|) = |k|^2 / (1 + |k|^2)^2."""
    k2 = np.square(kmag)
    return k2 / (1.0 + k2) ** 2


def _re_dot(a, b):
    return np.real(np.einsum("...i,...i->...", a, np.conj(b)))


def lyapunov_arrays(k, y, kappa: KappaWeights = DEFAULT_KAPPA, gamma: float = DEFAULT_GAMMA):
    """Batched functional for wavevectors (..., 3) and packed states (..., 10)."""
    k = np.asarray(k, dtype=float)
    y = np.asarray(y, dtype=complex)
    k2 = np.einsum("...i,...i->...", k, k)
    rho, u, ee, bb = y[..., RHO], y[..., U], y[..., E], y[..., B]
    base = gamma * np.abs(rho) ** 2 + np.sum(np.abs(y[..., 1:]) ** 2, axis=-1)
    if kappa.as_tuple() == (0.0, 0.0, 0.0):
        return base
    k1, kk2, k3 = kappa.as_tuple()
    term1 = _re_dot(u, 1j * k * rho[..., None]) / (1.0 + k2)
    term2 = k2 * _re_dot(u, ee) / (1.0 + k2) ** 2
    curl_b = -1j * np.cross(np.broadcast_to(k, bb.shape), bb)
    term3 = _re_dot(curl_b, ee) / (1.0 + k2) ** 2
    return base + k1 * term1 + kk2 * term2 + k3 * term3


def lyapunov_value(state: SpectralState, kappa: KappaWeights = DEFAULT_KAPPA,
                   gamma: float = DEFAULT_GAMMA) -> float:
    return float(lyapunov_arrays(state.k, state.to_array(), kappa, gamma))


def _unit_directions(rng, n):
    d = rng.standard_normal((n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def sample_wavevectors(rng, n, kmin=1e-3, kmax=1e3):
    """``n`` wavevectors, log-uniform modulus, isotropic direction."""
    kmag = 10 ** rng.uniform(np.log10(kmin), np.log10(kmax), n)
    return kmag[:, None] * _unit_directions(rng, n)


def equivalence_constants(kappa: KappaWeights = DEFAULT_KAPPA, gamma: float = DEFAULT_GAMMA,
                          n_samples: int = 10_000, seed: int = 0, kmin=1e-3, kmax=1e3):
    """Sampled (c_low, c_high) with c_low |U|^2 <= functional <= c_high |U|^2."""
    rng = np.random.default_rng(seed)
    k = sample_wavevectors(rng, n_samples, kmin, kmax)
    y = random_compatible(rng, k)
    ratio = lyapunov_arrays(k, y, kappa, gamma) / np.sum(np.abs(y) ** 2, axis=-1)
    i_lo, i_hi = int(np.argmin(ratio)), int(np.argmax(ratio))
    return {
        "c_low": float(ratio[i_lo]),
        "c_high": float(ratio[i_hi]),
        "argmin_kmag": float(np.linalg.norm(k[i_lo])),
        "argmax_kmag": float(np.linalg.norm(k[i_hi])),
        "n_samples": n_samples,
    }


def _fd_derivative(f, t, h):
    """Fourth-order central difference of f at t."""
    return (-f(t + 2 * h) + 8 * f(t + h) - 8 * f(t - h) + f(t - 2 * h)) / (12 * h)


def _two_sided(k, y0, t_end, h, tol, gamma):
    """Dense evaluator of the oracle trajectory on [-2h, t_end + 2h]."""
    L = generator(k, gamma)
    _, _, fwd = solve_linear(L, y0, (0.0, t_end + 2 * h), tol)
    _, _, bwd = solve_linear(L, y0, (0.0, -2 * h), tol)
    n = y0.size

    def state(t):
        t = np.asarray(t, dtype=float)
        z = np.where(t >= 0, fwd(np.maximum(t, 0.0)), bwd(np.minimum(t, 0.0)))
        return np.moveaxis(z[:n] + 1j * z[n:], 0, -1)

    return state


def verify_dissipation(kappa: KappaWeights = DEFAULT_KAPPA, k_samples=None,
                       gamma: float = DEFAULT_GAMMA, *, initial_states=None, seed: int = 0,
                       t_end: float = 5.0, n_times: int = 11, h: float = 1e-3,
                       eps: float = 1e-9, tol: float = 1e-11):
    """Largest lam with dE/dt + lam w(|k|) E <= eps at every sampled (mode, time).

    dE/dt comes from fourth-order central differences of the functional along
    oracle trajectories.  Initial data are random unit compatible states unless
    ``initial_states`` is given.  Returns ``(lam, report)``.
    """
    rng = np.random.default_rng(seed)
    if k_samples is None:
        k_samples = sample_wavevectors(rng, 200, 1e-3, 1e2)
    k_samples = np.atleast_2d(np.asarray(k_samples, dtype=float))
    if initial_states is None:
        initial_states = random_compatible(rng, k_samples)
    initial_states = np.atleast_2d(initial_states)
    times = np.linspace(0.0, t_end, n_times)

    lam_per_mode = np.empty(len(k_samples))
    worst = []
    n_violations = 0
    for i, (k, y0) in enumerate(zip(k_samples, initial_states)):
        kmag = float(np.linalg.norm(k))
        # keep omega h small enough for the difference stencil at large |k|
        hk = min(h, 0.1 / np.sqrt(0.75 + gamma * kmag**2 + kmag**2))
        state = _two_sided(k, y0, t_end, hk, tol, gamma)

        def energy(t):
            return lyapunov_arrays(k, state(t), kappa, gamma)

        dE = _fd_derivative(energy, times, hk)
        En = energy(times)
        wE = dissipation_weight(kmag) * En
        lam_t = (eps - dE) / wE
        j = int(np.argmin(lam_t))
        lam_per_mode[i] = lam_t[j]
        n_violations += int(np.sum(dE > eps))
        worst.append((float(lam_t[j]), kmag, float(times[j]), float(dE[j]), float(En[j])))

    lam = float(np.min(lam_per_mode))
    worst.sort()
    report = {
        "lambda_fitted": lam,
        "n_modes": int(len(k_samples)),
        "n_samples": int(len(k_samples) * n_times),
        "n_positive_derivative": n_violations,
        "worst_cases": [
            {"lambda": w[0], "kmag": w[1], "t": w[2], "dEdt": w[3], "E": w[4]} for w in worst[:5]
        ],
        "admissible_kappa": kappa.is_admissible(),
    }
    return lam, report


# ---------------------------------------------------------------------------
# pointwise bound |U(t)| <= C exp(-lam w t) |U_0|


def linear_trajectories(n: int, seed: int = 0, gamma: float = DEFAULT_GAMMA, kmin=1e-2,
                        kmax=1e2, t_end=None, n_out: int = 41, source: str = "closed_form",
                        tol: float = 1e-10):
    """Trajectories with random compatible unit data on a random k sample.

    The default horizon scales with 1/w(|k|) so every trajectory reaches a
    few e-folds of its slowest mode.  ``source="oracle"`` integrates numerically,
    which is slow for long horizons at large |k|.
    """
    from .oracle import integrate_linear

    rng = np.random.default_rng(seed)
    ks = sample_wavevectors(rng, n, kmin, kmax)
    y0s = random_compatible(rng, ks)
    out = []
    for k, y0 in zip(ks, y0s):
        T = t_end if t_end is not None else min(3.0 / dissipation_weight(np.linalg.norm(k)), 1e5)
        if source == "oracle":
            out.append(integrate_linear(k, y0, T, tol=tol, gamma=gamma, n_out=n_out))
            continue
        times = np.linspace(0.0, T, n_out)
        states = propagate_arrays(times, np.broadcast_to(k, (n_out, 3)),
                                  np.broadcast_to(y0, (n_out, y0.size)), gamma)
        out.append(Trajectory(k, times, states, 0.0))
    return out


def _log_ratios(traj: Trajectory):
    norms = np.linalg.norm(traj.states, axis=-1)
    w = dissipation_weight(np.linalg.norm(traj.k))
    return w * traj.times, np.log(norms / norms[0])


def mode_decay_rate(traj: Trajectory, tail: float = 0.5) -> float:
    """Least-squares slope of log|U(t)| over the last ``tail`` fraction of the trajectory."""
    t = traj.times
    logn = np.log(np.linalg.norm(traj.states, axis=-1))
    sel = t >= t[0] + (1 - tail) * (t[-1] - t[0])
    return float(np.polyfit(t[sel], logn[sel], 1)[0])


def _operator_norms(k, times, gamma):
    """Norm of e^{tL(k)} restricted to compatible data, for each t."""
    from scipy.linalg import null_space

    k = np.asarray(k, dtype=float)
    kmag = np.linalg.norm(k)
    # basis of the compatible subspace: null space of the two constraint rows
    cons = np.zeros((2, 10), dtype=complex)
    cons[0, RHO] = 1.0
    cons[0, E] = 1j * k
    cons[1, B] = k / kmag
    basis = null_space(cons).T  # (8, 10), orthonormal
    out = np.empty(len(times))
    for j, t in enumerate(times):
        cols = propagate_arrays(t, np.broadcast_to(k, (len(basis), 3)), basis, gamma)
        out[j] = np.linalg.norm(cols.T, 2)
    return out


def fit_pointwise_bound(trajectories, gamma: float = DEFAULT_GAMMA, rate_safety: float = 0.5,
                        worst_case: bool = True) -> BoundFit:
    """Two-stage fit of (C, lam).

    Stage 1 takes lam as ``rate_safety`` times the smallest normalised late-time
    decay rate ``-slope / w(|k|)`` over all trajectories.  Stage 2 takes the
    smallest C >= 1 covering every sample; with ``worst_case`` the samples are
    augmented by the operator norm of the propagator at each trajectory's
    (k, t) points, so C covers all data at those points and not only the
    drawn initial states.
    """
    rates = []
    for tr in trajectories:
        w = dissipation_weight(np.linalg.norm(tr.k))
        rates.append(-mode_decay_rate(tr) / w)
    lam = rate_safety * float(np.min(rates))

    logC = 0.0
    for tr in trajectories:
        wt, logr = _log_ratios(tr)
        logC = max(logC, float(np.max(logr + lam * wt)))
        if worst_case:
            opn = _operator_norms(tr.k, tr.times, gamma)
            logC = max(logC, float(np.max(np.log(opn) + lam * wt)))
    C = float(np.exp(logC))
    fit = BoundFit(C, lam, 0.0, {"min_rate": float(np.min(rates)), "n": len(trajectories)})
    fit.max_violation = bound_violation(fit, trajectories)
    return fit


def bound_violation(fit: BoundFit, trajectories) -> float:
    """max over samples of log|U(t)|/|U_0| - log C + lam w t (<= 0 when the bound holds)."""
    worst = -np.inf
    for tr in trajectories:
        wt, logr = _log_ratios(tr)
        worst = max(worst, float(np.max(logr - np.log(fit.C) + fit.lambda_ * wt)))
    return worst

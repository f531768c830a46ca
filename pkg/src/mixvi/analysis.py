"""Exact Gaussian-case recursions and convergence experiments.

For a single Gaussian component against a Gaussian target, the whitened
variables Sigma_n = C_star^{-1/2} C_n C_star^{-1/2} and
v_n = C_star^{-1/2}(m_n - m_star) evolve in closed form:

    v_{n+1}     = (I - dt_n Sigma_n) v_n,
    Sigma_{n+1} = h_n(Sigma_n),       h_n(x) = x exp(dt_n (1 - x)),
    dt_n        = min(dt_max, beta / ||Sigma_n - I||_2).

These recursions are the independent oracle for the integrator's
exact-expectation mode, and the harness below measures the advertised
behavior: logarithmic warm-up cost in the initial spectrum, the two
single-term step-rule pathologies, and noise-driven convergence under a
decaying scheduler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spd
from .integrator import scheduler_eta


class IterationCapError(RuntimeError):
    """The noise-free recursion failed to reach tolerance within the cap."""


@dataclass(frozen=True)
class GaussianOracleState:
    """Whitened covariance and mean-offset of the exact recursion."""

    sigma: np.ndarray  # (d, d) SPD
    v: np.ndarray      # (d,)


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean Gaussian perturbations injected into the noisy recursion."""

    omega_scale: float = 0.0  # symmetric matrix noise on the covariance update
    w_scale: float = 0.0      # vector noise on the mean update

    def __post_init__(self):
        if self.omega_scale < 0.0 or self.w_scale < 0.0:
            raise ValueError("noise scales must be >= 0")


def h_scalar(x: float, dt: float) -> float:
    """Eigenvalue map x -> x e^{dt (1 - x)}; fixed point at x = 1."""
    if x <= 0.0:
        raise ValueError("x must be positive")
    return x * np.exp(dt * (1.0 - x))


def oracle_step(state: GaussianOracleState, dt_max: float,
                beta: float) -> tuple[GaussianOracleState, float]:
    """One exact noise-free step; returns the new state and the dt used."""
    w, q = spd.sym_eig(state.sigma)
    gap = float(np.max(np.abs(w - 1.0)))
    dt = dt_max if gap == 0.0 else min(dt_max, beta / gap)
    new_w = w * np.exp(dt * (1.0 - w))
    sigma = spd.symmetrize((q * new_w) @ q.T)
    v = state.v - dt * (state.sigma @ state.v)
    return GaussianOracleState(sigma, v), dt


@dataclass(frozen=True)
class NoiseFreeReport:
    iterations: int                      # first n with both errors <= eps
    sigma_errors: np.ndarray             # ||Sigma_n - I||_2 trace, n = 0..N
    v_norms: np.ndarray                  # ||v_n||_2 trace
    dts: np.ndarray                      # dt_1..dt_N


def noise_free_experiment(sigma0: np.ndarray, v0: np.ndarray, dt_max: float, beta: float,
                          eps: float, max_iterations: int = 100_000) -> NoiseFreeReport:
    """Iterate the exact recursion until ||Sigma - I||_2 and ||v||_2 are <= eps."""
    state = GaussianOracleState(np.asarray(sigma0, dtype=float), np.asarray(v0, dtype=float))
    d = state.v.shape[0]
    eye = np.eye(d)
    sig_errs = [spd.spectral_norm(state.sigma - eye)]
    v_norms = [float(np.linalg.norm(state.v))]
    dts = []
    n = 0
    while sig_errs[-1] > eps or v_norms[-1] > eps:
        if n >= max_iterations:
            raise IterationCapError(f"no convergence to {eps} within {max_iterations} steps")
        state, dt = oracle_step(state, dt_max, beta)
        n += 1
        dts.append(dt)
        sig_errs.append(spd.spectral_norm(state.sigma - eye))
        v_norms.append(float(np.linalg.norm(state.v)))
    return NoiseFreeReport(n, np.array(sig_errs), np.array(v_norms), np.array(dts))


@dataclass(frozen=True)
class PathologyReport:
    """Scalar-case diagnosis of the two truncated step rules."""

    dt_max_only_first: float        # Sigma_1 under dt = dt_max only
    beta_interval: tuple[float, float]   # (e^{-beta/2}, e^{beta/2})
    beta_only_first: float          # Sigma_1 under dt = beta/|Sigma-1| only
    beta_only_escapes: bool         # left the interval in one step
    full_rule_errors: np.ndarray    # |Sigma_n - 1| trace under the full rule
    full_rule_monotone: bool


def single_term_pathologies(sigma0: float, dt_max: float, beta: float,
                            n_steps: int = 60) -> PathologyReport:
    """Demonstrate both failure modes of using a single step-size term (d = 1)."""
    if sigma0 <= 0.0 or sigma0 == 1.0:
        raise ValueError("sigma0 must be positive and != 1")
    dt_only = h_scalar(sigma0, dt_max)

    lo, hi = np.exp(-beta / 2.0), np.exp(beta / 2.0)
    beta_only = h_scalar(sigma0, beta / abs(sigma0 - 1.0))
    escapes = not (lo < beta_only < hi)

    x = sigma0
    errs = [abs(x - 1.0)]
    for _ in range(n_steps):
        dt = min(dt_max, beta / abs(x - 1.0)) if x != 1.0 else dt_max
        x = h_scalar(x, dt)
        errs.append(abs(x - 1.0))
    errs = np.array(errs)
    monotone = bool(np.all(np.diff(errs) <= 1e-15))
    return PathologyReport(dt_only, (float(lo), float(hi)), float(beta_only), escapes,
                           errs, monotone)


@dataclass(frozen=True)
class StochasticTrace:
    seed: int
    sigma_errors: np.ndarray  # ||Sigma_n - I||_F, n = 0..N
    v_norms: np.ndarray
    dts: np.ndarray


def stochastic_experiment(sigma0: np.ndarray, v0: np.ndarray, noise: NoiseSpec,
                          scheduler: str, n_steps: int, seeds, dt_max: float = 0.9,
                          beta: float = 0.9, eta_min: float = 0.1) -> list[StochasticTrace]:
    """Simulate the noisy whitened recursion for each seed.

    Per step: Omega_n is a symmetrized Gaussian matrix, w_n a Gaussian
    vector; with L_n the Cholesky factor of Sigma_n,

        dt_n        = min(eta_n dt_max, beta / ||I - L^T L + Omega||_2),
        Sigma_{n+1} = L exp(dt_n (I - L^T L + Omega)) L^T,
        v_{n+1}     = v - dt_n L (L^T v + w).

    With zero noise this reduces exactly to the noise-free recursion.
    """
    sigma0 = np.asarray(sigma0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    d = v0.shape[0]
    eye = np.eye(d)
    traces = []
    for seed in seeds:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(1,)))
        sigma, v = sigma0.copy(), v0.copy()
        sig_errs = [float(np.linalg.norm(sigma - eye))]
        v_norms = [float(np.linalg.norm(v))]
        dts = []
        for n in range(1, n_steps + 1):
            root = spd.cholesky(sigma)
            omega = noise.omega_scale * rng.standard_normal((d, d))
            omega = spd.symmetrize(omega)
            w_noise = noise.w_scale * rng.standard_normal(d)

            drift = spd.symmetrize(eye - root.T @ root) + omega
            eta = scheduler_eta(scheduler, n, n_steps, eta_min)
            norm = spd.spectral_norm(drift)
            dt = eta * dt_max if norm == 0.0 else min(eta * dt_max, beta / norm)

            fac = spd.scaled_exp_factor(root, drift, dt)
            sigma = spd.symmetrize(fac @ fac.T)
            v = v - dt * (root @ (root.T @ v + w_noise))
            sig_errs.append(float(np.linalg.norm(sigma - eye)))
            v_norms.append(float(np.linalg.norm(v)))
            dts.append(dt)
        traces.append(StochasticTrace(int(seed), np.array(sig_errs), np.array(v_norms),
                                      np.array(dts)))
    return traces

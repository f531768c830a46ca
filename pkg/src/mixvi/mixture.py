"""Gaussian mixture state: log-density, reproducible sampling, weights.

The state is an immutable value object between integrator steps: arrays are
stored with the writeable flag cleared, so read-only sharing is safe and all
mutation goes through constructing a new state.

Sample batches come from counter-based streams keyed by
``(seed, iteration, component)`` so that per-component sampling is bitwise
reproducible regardless of evaluation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

_LOG_2PI = float(np.log(2.0 * np.pi))
_WEIGHT_TOL = 1e-12


def normalize_log_weights(log_w: np.ndarray) -> np.ndarray:
    """Project log-weights back onto the simplex: subtract logsumexp.

    Safe for widely spread inputs (no overflow); logsumexp of the output is
    0 to ~1e-15.
    """
    log_w = np.asarray(log_w, dtype=float)
    if not np.all(np.isfinite(log_w)):
        raise ValueError("log-weights must be finite")
    return log_w - logsumexp(log_w)


@dataclass(frozen=True)
class MixtureState:
    """Variational parameters of a K-component Gaussian mixture in R^d.

    Attributes:
        means: (K, d) component means.
        sqrt_factors: (K, d, d) lower-triangular factors L_k with positive
            diagonals; covariances are C_k = L_k @ L_k.T.
        log_weights: (K,) log weights, logsumexp == 0 to 1e-12.
    """

    means: np.ndarray
    sqrt_factors: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self):
        means = np.array(self.means, dtype=float)
        roots = np.array(self.sqrt_factors, dtype=float)
        log_w = np.array(self.log_weights, dtype=float)
        if means.ndim != 2:
            raise ValueError("means must have shape (K, d)")
        k, d = means.shape
        if roots.shape != (k, d, d):
            raise ValueError("sqrt_factors must have shape (K, d, d)")
        if log_w.shape != (k,):
            raise ValueError("log_weights must have shape (K,)")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(roots))
                and np.all(np.isfinite(log_w))):
            raise ValueError("state entries must be finite")
        for lk in roots:
            if np.any(lk[np.triu_indices(d, k=1)] != 0.0):
                raise ValueError("sqrt_factors must be lower-triangular")
            if np.any(np.diag(lk) <= 0.0):
                raise ValueError("sqrt_factors must have positive diagonals")
        if abs(logsumexp(log_w)) > _WEIGHT_TOL:
            raise ValueError("log_weights must be normalized (logsumexp == 0)")
        for arr in (means, roots, log_w):
            arr.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sqrt_factors", roots)
        object.__setattr__(self, "log_weights", log_w)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def covariances(self) -> np.ndarray:
        """(K, d, d) stack of L_k @ L_k.T."""
        return np.einsum("kij,klj->kil", self.sqrt_factors, self.sqrt_factors)


def standard_init(n_components: int, dim: int, seed: int, mean_scale: float = 1.0,
                  cov_scale: float = 1.0, mean_shift: float = 0.0) -> MixtureState:
    """Equal-weight state with means ~ mean_scale*N(0, I) + shift, C_k = cov_scale^2 I."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    means = mean_scale * rng.standard_normal((n_components, dim)) + mean_shift
    roots = np.broadcast_to(cov_scale * np.eye(dim), (n_components, dim, dim)).copy()
    log_w = normalize_log_weights(np.zeros(n_components))
    return MixtureState(means, roots, log_w)


def draw_batch(seed: int, iteration: int, component: int, n_samples: int, dim: int) -> np.ndarray:
    """(n_samples, dim) standard-normal draws from the (iteration, component) stream.

    Deterministic in (seed, iteration, component); distinct labels give
    independent streams.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples per batch")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(iteration, component))
    return np.random.default_rng(ss).standard_normal((n_samples, dim))


def component_log_densities(state: MixtureState, theta: np.ndarray) -> np.ndarray:
    """(K, N) matrix of log[w_k N(theta_n; m_k, C_k)] at the given points."""
    pts = np.atleast_2d(np.asarray(theta, dtype=float))
    k, d = state.means.shape
    out = np.empty((k, pts.shape[0]))
    for i in range(k):
        lk = state.sqrt_factors[i]
        z = solve_triangular(lk, (pts - state.means[i]).T, lower=True)
        quad = np.einsum("ij,ij->j", z, z)
        log_norm = 0.5 * d * _LOG_2PI + np.sum(np.log(np.diag(lk)))
        out[i] = state.log_weights[i] - 0.5 * quad - log_norm
    return out


def log_density(state: MixtureState, theta: np.ndarray):
    """Mixture log-density log sum_k w_k N(theta; m_k, L_k L_k.T).

    Accepts a single point (d,) or a batch (N, d); returns a scalar or (N,).
    Evaluated by log-sum-exp over per-component triangular solves.
    """
    theta = np.asarray(theta, dtype=float)
    vals = logsumexp(component_log_densities(state, theta), axis=0)
    return float(vals[0]) if theta.ndim == 1 else vals


def mixture_moments(state: MixtureState) -> tuple[np.ndarray, np.ndarray]:
    """Overall mean and covariance of the mixture (law of total variance)."""
    w = state.weights
    mean = w @ state.means
    cov = np.zeros((state.dim, state.dim))
    for i in range(state.n_components):
        delta = state.means[i] - mean
        lk = state.sqrt_factors[i]
        cov += w[i] * (lk @ lk.T + np.outer(delta, delta))
    return mean, 0.5 * (cov + cov.T)


def save_state(state: MixtureState, path) -> None:
    doc = {
        "K": state.n_components,
        "d": state.dim,
        "means": state.means.tolist(),
        "sqrt_factors": state.sqrt_factors.tolist(),
        "log_weights": state.log_weights.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_state(path) -> MixtureState:
    doc = json.loads(Path(path).read_text())
    state = MixtureState(np.array(doc["means"]), np.array(doc["sqrt_factors"]),
                         np.array(doc["log_weights"]))
    if state.n_components != doc["K"] or state.dim != doc["d"]:
        raise ValueError("state document is inconsistent with its K/d header")
    return state

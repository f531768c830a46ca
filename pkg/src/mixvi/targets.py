"""Benchmark potentials: target densities known up to normalization.

Each target exposes only its dimension and pointwise potential values
(the negative log of the un-normalized density); no derivatives anywhere.
``evaluate`` accepts a single point ``(d,)`` or a batch ``(N, d)``.

The 2-D problems carry their analytic reference marginal in the first two
coordinates; high-dimensional lifts are constructed so that this marginal
is exactly preserved (independent Gaussian tails for the multimodal case,
an exactly integrable Gaussian coupling for the ring and banana cases).
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from . import spd

_LOG_2PI = float(np.log(2.0 * np.pi))


class InvalidTemperatureError(ValueError):
    """Tempering requires T >= 1."""


class TargetPotential:
    """Interface: dimension plus pure, finite potential evaluation."""

    dim: int
    # Exact analytic marginal when True; unnormalized values otherwise
    # (consumers normalize on their evaluation grid).
    marginal_is_normalized: bool = False

    def evaluate(self, theta):
        raise NotImplementedError

    def __call__(self, theta):
        return self.evaluate(theta)

    def reference_marginal_2d(self, points: np.ndarray) -> np.ndarray:
        """Density of (theta_1, theta_2) at (N, 2) points, if known."""
        raise NotImplementedError(f"{type(self).__name__} has no analytic 2-D marginal")

    def _batch(self, theta):
        pts = np.atleast_2d(np.asarray(theta, dtype=float))
        if pts.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got {pts.shape[1]}")
        return pts, np.asarray(theta).ndim == 1

    @staticmethod
    def _out(vals, scalar):
        return float(vals[0]) if scalar else vals


class GaussianPotential(TargetPotential):
    """Quadratic potential 0.5 (theta-m)^T C^{-1} (theta-m) via triangular solves."""

    def __init__(self, mean: np.ndarray, cov: np.ndarray):
        self.mean = np.asarray(mean, dtype=float)
        self.cov = np.asarray(cov, dtype=float)
        self.dim = self.mean.shape[0]
        self.chol = spd.cholesky(self.cov)

    def evaluate(self, theta):
        pts, scalar = self._batch(theta)
        z = solve_triangular(self.chol, (pts - self.mean).T, lower=True)
        return self._out(0.5 * np.einsum("ij,ij->j", z, z), scalar)


def gaussian_target(m_star, c_star) -> GaussianPotential:
    return GaussianPotential(m_star, c_star)


class MultimodalPotential(TargetPotential):
    """Ten well-separated Gaussian modes in the first two coordinates.

    Mode centers are drawn once per ``layout_seed`` from Uniform([-8, 8]^2)
    with rejection enforcing pairwise separation >= 3; every mode has a
    unit-determinant covariance (the identity) and weight 1/10.  Extra
    coordinates are independent unit Gaussians centered at per-layout
    N(0, 1) draws.
    """

    N_MODES = 10
    MODE_VAR = 1.0
    MIN_SEPARATION = 3.0
    marginal_is_normalized = True

    def __init__(self, dim: int, layout_seed: int):
        if dim < 2:
            raise ValueError("dimension must be at least 2")
        self.dim = dim
        self.layout_seed = layout_seed
        rng = np.random.default_rng(layout_seed)
        centers = []
        while len(centers) < self.N_MODES:
            cand = rng.uniform(-8.0, 8.0, size=2)
            if all(np.linalg.norm(cand - c) >= self.MIN_SEPARATION for c in centers):
                centers.append(cand)
        self.mode_centers = np.array(centers)
        self.tail_means = rng.standard_normal(dim - 2)

    def _log_marginal(self, pts2: np.ndarray) -> np.ndarray:
        d2 = np.sum((pts2[:, None, :] - self.mode_centers[None, :, :]) ** 2, axis=-1)
        log_comp = -0.5 * d2 / self.MODE_VAR - np.log(2.0 * np.pi * self.MODE_VAR)
        return logsumexp(log_comp, axis=1) - np.log(self.N_MODES)

    def evaluate(self, theta):
        pts, scalar = self._batch(theta)
        vals = -self._log_marginal(pts[:, :2])
        if self.dim > 2:
            vals = vals + 0.5 * np.sum((pts[:, 2:] - self.tail_means) ** 2, axis=1)
        return self._out(vals, scalar)

    def reference_marginal_2d(self, points):
        return np.exp(self._log_marginal(np.atleast_2d(np.asarray(points, dtype=float))))


class RingPotential(TargetPotential):
    """Circular geometry: residual (1 - |theta_12|^2)/0.3, all modes on the unit circle."""

    def __init__(self, dim: int):
        if dim < 2:
            raise ValueError("dimension must be at least 2")
        self.dim = dim

    def _base(self, pts2: np.ndarray) -> np.ndarray:
        res = (1.0 - pts2[:, 0] ** 2 - pts2[:, 1] ** 2) / 0.3
        return 0.5 * res ** 2

    def evaluate(self, theta):
        pts, scalar = self._batch(theta)
        vals = self._base(pts[:, :2])
        if self.dim > 2:
            coupled = pts[:, 0] + pts[:, 1]  # all-ones coupling matrix
            vals = vals + 0.5 * np.sum((pts[:, 2:] - coupled[:, None]) ** 2, axis=1)
        return self._out(vals, scalar)

    def reference_marginal_2d(self, points):
        pts2 = np.atleast_2d(np.asarray(points, dtype=float))
        return np.exp(-self._base(pts2))


class BananaPotential(TargetPotential):
    """Rosenbrock-type curved geometry with residuals (10(theta_2 - theta_1^2), 1 - theta_1)/sqrt(10)."""

    def __init__(self, dim: int):
        if dim < 2:
            raise ValueError("dimension must be at least 2")
        self.dim = dim

    @staticmethod
    def _base(pts2: np.ndarray) -> np.ndarray:
        return 5.0 * (pts2[:, 1] - pts2[:, 0] ** 2) ** 2 + 0.05 * (1.0 - pts2[:, 0]) ** 2

    def evaluate(self, theta):
        pts, scalar = self._batch(theta)
        vals = self._base(pts[:, :2])
        if self.dim > 2:
            coupled = pts[:, 0] + pts[:, 1]
            vals = vals + 0.5 * np.sum((pts[:, 2:] - coupled[:, None]) ** 2, axis=1)
        return self._out(vals, scalar)

    def reference_marginal_2d(self, points):
        pts2 = np.atleast_2d(np.asarray(points, dtype=float))
        return np.exp(-self._base(pts2))


class FunnelPotential(TargetPotential):
    """Multiscale funnel: theta_1 ~ N(0, 9), theta_i | theta_1 ~ N(0, e^{theta_1}).

    The constant is pinned so the potential vanishes at the origin; only
    e^{-theta_1} ever appears, so values stay finite for any finite input.
    """

    def __init__(self, dim: int):
        if dim < 2:
            raise ValueError("dimension must be at least 2")
        self.dim = dim

    def evaluate(self, theta):
        pts, scalar = self._batch(theta)
        t1 = pts[:, 0]
        vals = (t1 ** 2 / 18.0 + 0.5 * (self.dim - 1) * t1
                + 0.5 * np.exp(-t1) * np.sum(pts[:, 1:] ** 2, axis=1))
        return self._out(vals, scalar)

    def reference_marginal_2d(self, points):
        pts2 = np.atleast_2d(np.asarray(points, dtype=float))
        t1, t2 = pts2[:, 0], pts2[:, 1]
        log_p = (-t1 ** 2 / 18.0 - 0.5 * np.log(18.0 * np.pi)
                 - 0.5 * t1 - 0.5 * _LOG_2PI - 0.5 * t2 ** 2 * np.exp(-t1))
        return np.exp(log_p)


class TemperedTarget(TargetPotential):
    """Potential divided by a temperature T >= 1 (entropy/exploration trade-off)."""

    def __init__(self, base: TargetPotential, temperature: float):
        if temperature < 1.0:
            raise InvalidTemperatureError(f"temperature must be >= 1, got {temperature}")
        self.base = base
        self.temperature = float(temperature)
        self.dim = base.dim

    def evaluate(self, theta):
        return self.base.evaluate(theta) / self.temperature


def case_a_target(dim: int, layout_seed: int = 0) -> MultimodalPotential:
    return MultimodalPotential(dim, layout_seed)


def case_b_target(dim: int) -> RingPotential:
    return RingPotential(dim)


def case_c_target(dim: int) -> BananaPotential:
    return BananaPotential(dim)


def funnel_target(dim: int) -> FunnelPotential:
    return FunnelPotential(dim)


def temper(base: TargetPotential, temperature: float) -> TemperedTarget:
    return TemperedTarget(base, temperature)


def make_target(spec: dict) -> TargetPotential:
    """Build a target from a configuration document.

    Recognized names: case_a, case_b, case_c, funnel, gaussian, darcy.
    """
    kind = spec["name"]
    dim = int(spec.get("dim", 2))
    if kind == "case_a":
        return case_a_target(dim, int(spec.get("layout_seed", 0)))
    if kind == "case_b":
        return case_b_target(dim)
    if kind == "case_c":
        return case_c_target(dim)
    if kind == "funnel":
        return funnel_target(dim)
    if kind == "gaussian":
        return gaussian_target(np.array(spec["mean"], dtype=float),
                               np.array(spec["cov"], dtype=float))
    if kind == "darcy":
        from . import darcy

        return darcy.target_from_spec(spec)
    raise ValueError(f"unknown target name: {kind!r}")

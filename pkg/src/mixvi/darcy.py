"""Bayesian inversion of a 2-D Darcy flow: KL field, FD solver, symmetric observations.

The log-permeability on [0,1]^2 is a truncated cosine expansion
log a = sum_l theta_l sqrt(lambda_l) phi_l with
lambda_l = (pi^2 (l1^2 + l2^2) + tau^2)^{-decay}.  Pressure solves
-div(a grad p) = f with homogeneous Dirichlet boundaries on a uniform
n x n cell grid (5-point stencil, face coefficients evaluated analytically
at edge midpoints, direct sparse factorization).

Observations are the symmetric pressure sums (p(x) + p(1-x1, x2))/2 at 120
lattice points in the left half, so a field and its x1-mirror produce
identical data: the posterior is bimodal by construction, and flipping the
sign of every odd-l1 coefficient maps one mode onto the other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as splinalg

from .targets import TargetPotential

_RESIDUAL_TOL = 1e-10


class SolverDivergenceError(RuntimeError):
    """The pressure solve missed its residual tolerance."""


@dataclass(frozen=True)
class Grid2D:
    """Uniform n x n cell grid on [0,1]^2 with spacing h = 1/n.

    Interior nodes are (i*h, j*h) for 1 <= i, j <= n-1.  n must be even so
    mirrored nodes 1 - x1 land on nodes.
    """

    n: int

    def __post_init__(self):
        if self.n < 8 or self.n % 2 != 0:
            raise ValueError("grid size must be even and >= 8")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    def interior_points(self) -> np.ndarray:
        idx = np.arange(1, self.n) * self.h
        gx, gy = np.meshgrid(idx, idx, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def node_points(self) -> np.ndarray:
        idx = np.arange(self.n + 1) * self.h
        gx, gy = np.meshgrid(idx, idx, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def x_face_points(self) -> np.ndarray:
        """Midpoints ((i+1/2)h, jh), i = 0..n-1, j = 1..n-1, row-major."""
        xf = (np.arange(self.n) + 0.5) * self.h
        yf = np.arange(1, self.n) * self.h
        gx, gy = np.meshgrid(xf, yf, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def y_face_points(self) -> np.ndarray:
        """Midpoints (ih, (j+1/2)h), i = 1..n-1, j = 0..n-1, row-major."""
        xf = np.arange(1, self.n) * self.h
        yf = (np.arange(self.n) + 0.5) * self.h
        gx, gy = np.meshgrid(xf, yf, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass(frozen=True)
class KLBasis:
    """Cosine eigenpairs sorted by descending eigenvalue."""

    modes: np.ndarray        # (N, 2) integer index pairs (l1, l2)
    eigenvalues: np.ndarray  # (N,) strictly positive, non-increasing
    tau: float = 3.0
    decay: float = 2.0

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]


def kl_eigenpairs(n_theta: int, tau: float = 3.0, decay: float = 2.0,
                  index_bound: int = 16) -> KLBasis:
    """Top-n_theta eigenpairs, ties broken lexicographically in (l1, l2)."""
    if n_theta < 1:
        raise ValueError("need at least one mode")
    pairs = [(l1, l2) for l1 in range(index_bound + 1) for l2 in range(index_bound + 1)
             if (l1, l2) != (0, 0)]
    if n_theta > len(pairs):
        raise ValueError("index bound too small for the requested truncation")
    # ascending l1^2+l2^2 == descending eigenvalue; lexicographic tie-break
    pairs.sort(key=lambda p: (p[0] ** 2 + p[1] ** 2, p))
    modes = np.array(pairs[:n_theta], dtype=int)
    lam = (np.pi ** 2 * np.sum(modes ** 2, axis=1) + tau ** 2) ** (-decay)
    return KLBasis(modes, lam, tau, decay)


def eigenfunction_matrix(basis: KLBasis, points: np.ndarray) -> np.ndarray:
    """(M, N) matrix of phi_l(x) values.

    phi_l = c_l cos(pi l1 x1) cos(pi l2 x2) with c_l = sqrt(2) when one index
    vanishes and 2 otherwise (cos(0) = 1 makes the three cases one formula).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    l1 = basis.modes[:, 0]
    l2 = basis.modes[:, 1]
    coeff = np.where((l1 == 0) | (l2 == 0), np.sqrt(2.0), 2.0)
    cos1 = np.cos(np.pi * np.outer(pts[:, 0], l1))
    cos2 = np.cos(np.pi * np.outer(pts[:, 1], l2))
    return coeff[None, :] * cos1 * cos2


def log_permeability(theta: np.ndarray, basis: KLBasis, points: np.ndarray) -> np.ndarray:
    """Truncated expansion sum_l theta_l sqrt(lambda_l) phi_l at the points."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.n_modes,):
        raise ValueError("coefficient vector length must match the basis")
    return eigenfunction_matrix(basis, points) @ (np.sqrt(basis.eigenvalues) * theta)


def mirror_coeffs(theta: np.ndarray, basis: KLBasis) -> np.ndarray:
    """Coefficients of the x1-mirrored field: flip the sign of odd-l1 modes."""
    signs = np.where(basis.modes[:, 0] % 2 == 1, -1.0, 1.0)
    return np.asarray(theta, dtype=float) * signs


def source_values(points: np.ndarray) -> np.ndarray:
    """Piecewise-constant fluid source: 1000 / 2000 / 3000 by height."""
    x2 = np.atleast_2d(np.asarray(points, dtype=float))[:, 1]
    return np.where(x2 <= 4.0 / 6.0, 1000.0, np.where(x2 <= 5.0 / 6.0, 2000.0, 3000.0))


@lru_cache(maxsize=8)
def _assembly_template(n: int):
    """Index arrays for the 5-point stencil on the (n-1)^2 interior unknowns."""
    m = n - 1
    i = np.repeat(np.arange(1, n), m)  # interior node coordinates per unknown
    j = np.tile(np.arange(1, n), m)
    q = (i - 1) * m + (j - 1)

    # face-array flat indices: x-faces stored (n, m) row-major, y-faces (m, n)
    east = i * m + (j - 1)
    west = (i - 1) * m + (j - 1)
    north = (i - 1) * n + j
    south = (i - 1) * n + (j - 1)

    rows = [q]
    cols = [q]
    masks = []
    for neighbor_q, exists in (
        (q + m, i <= n - 2),   # east neighbor (i+1, j)
        (q - m, i >= 2),       # west
        (q + 1, j <= n - 2),   # north (i, j+1)
        (q - 1, j >= 2),       # south
    ):
        rows.append(q[exists])
        cols.append(neighbor_q[exists])
        masks.append(exists)
    return q, east, west, north, south, rows, cols, masks


def _solve_from_faces(ax: np.ndarray, ay: np.ndarray, rhs: np.ndarray, n: int) -> np.ndarray:
    """Assemble and solve the SPD system given face coefficients.

    Args:
        ax: (n*(n-1),) permeability at x-face midpoints, row-major.
        ay: ((n-1)*n,) permeability at y-face midpoints.
        rhs: ((n-1)^2,) source at interior nodes.

    Returns:
        Interior pressure as an (n-1, n-1) array indexed [i-1, j-1].
    """
    m = n - 1
    q, east, west, north, south, rows, cols, masks = _assembly_template(n)
    scale = float(n * n)  # 1/h^2
    a_e, a_w = ax[east], ax[west]
    a_n, a_s = ay[north], ay[south]
    diag = scale * (a_e + a_w + a_n + a_s)
    data = [diag, -scale * a_e[masks[0]], -scale * a_w[masks[1]],
            -scale * a_n[masks[2]], -scale * a_s[masks[3]]]
    mat = sparse.csc_matrix((np.concatenate(data),
                             (np.concatenate(rows), np.concatenate(cols))),
                            shape=(m * m, m * m))
    pressure = splinalg.spsolve(mat, rhs)
    rhs_norm = float(np.linalg.norm(rhs))
    residual = float(np.linalg.norm(mat @ pressure - rhs))
    if residual > _RESIDUAL_TOL * max(rhs_norm, 1.0):
        raise SolverDivergenceError(f"relative residual {residual / max(rhs_norm, 1.0):.3e}")
    return pressure.reshape(m, m)


def solve_darcy(log_a, grid: Grid2D, source=source_values) -> np.ndarray:
    """Pressure for a given log-permeability evaluator.

    Args:
        log_a: callable mapping (M, 2) points to (M,) log-permeability values.
        source: callable mapping (M, 2) points to (M,) source values.

    Returns:
        Interior pressure, shape (n-1, n-1).
    """
    ax = np.exp(np.asarray(log_a(grid.x_face_points()), dtype=float))
    ay = np.exp(np.asarray(log_a(grid.y_face_points()), dtype=float))
    rhs = np.asarray(source(grid.interior_points()), dtype=float)
    return _solve_from_faces(ax, ay, rhs, grid.n)


def pressure_with_boundary(interior: np.ndarray) -> np.ndarray:
    """Embed interior values into the full (n+1, n+1) node array (zero boundary)."""
    m = interior.shape[0]
    full = np.zeros((m + 2, m + 2))
    full[1:-1, 1:-1] = interior
    return full


def observation_nodes(grid: Grid2D) -> np.ndarray:
    """(120, 2) node indices of the 8 x 15 observation lattice in the left region.

    x1 = i/20 exactly (requires 20 | n); x2 = j/16 snapped to the nearest
    node, exact whenever 16 | n.  Mirrors act on x1 only, so they are nodes too.
    """
    n = grid.n
    if n % 20 != 0:
        raise ValueError("observation lattice needs a grid size divisible by 20")
    xi = np.arange(1, 9) * (n // 20)
    yj = np.array([int(j * n / 16.0 + 0.5) for j in range(1, 16)])
    gx, gy = np.meshgrid(xi, yj, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def observe(pressure_full: np.ndarray, grid: Grid2D, obs_nodes: np.ndarray) -> np.ndarray:
    """Symmetric pressure sums (p(x1, x2) + p(1-x1, x2))/2 in lattice order."""
    i = obs_nodes[:, 0]
    j = obs_nodes[:, 1]
    return 0.5 * (pressure_full[i, j] + pressure_full[grid.n - i, j])


@dataclass(frozen=True)
class DarcyPosterior:
    """Everything defining the posterior: basis, grid, data, and noise scales."""

    basis: KLBasis
    grid: Grid2D
    obs_nodes: np.ndarray
    y_obs: np.ndarray
    sigma0: float = 5.0
    sigma_eta: float = 0.25
    theta_ref: np.ndarray | None = None
    seed: int | None = None


class _ForwardOperator:
    """Cached per-grid machinery for fast repeated forward solves."""

    def __init__(self, grid: Grid2D, basis: KLBasis):
        self.grid = grid
        self.basis = basis
        self.phi_x = eigenfunction_matrix(basis, grid.x_face_points())
        self.phi_y = eigenfunction_matrix(basis, grid.y_face_points())
        self.rhs = source_values(grid.interior_points())
        self.sqrt_eigs = np.sqrt(basis.eigenvalues)

    def solve(self, theta: np.ndarray) -> np.ndarray:
        w = self.sqrt_eigs * np.asarray(theta, dtype=float)
        ax = np.exp(self.phi_x @ w)
        ay = np.exp(self.phi_y @ w)
        return _solve_from_faces(ax, ay, self.rhs, self.grid.n)


def forward_map(posterior: DarcyPosterior, theta: np.ndarray,
                operator: _ForwardOperator | None = None) -> np.ndarray:
    """G(theta): KL field -> pressure solve -> symmetric observations."""
    op = operator or _ForwardOperator(posterior.grid, posterior.basis)
    p_full = pressure_with_boundary(op.solve(theta))
    return observe(p_full, posterior.grid, posterior.obs_nodes)


class DarcyPotential(TargetPotential):
    """Posterior potential ||y - G(theta)||^2/(2 s_eta^2) + ||theta||^2/(2 s_0^2).

    Batch evaluation runs each solve independently; with ``n_workers > 1`` the
    rows are mapped over a process pool in fixed order, so the values are
    identical for any worker count.
    """

    def __init__(self, posterior: DarcyPosterior, n_workers: int = 1):
        self.posterior = posterior
        self.dim = posterior.basis.n_modes
        self.n_workers = n_workers
        self._op = _ForwardOperator(posterior.grid, posterior.basis)
        self._pool = None

    def forward(self, theta: np.ndarray) -> np.ndarray:
        return forward_map(self.posterior, theta, self._op)

    def _evaluate_rows(self, pts: np.ndarray) -> np.ndarray:
        post = self.posterior
        vals = np.empty(pts.shape[0])
        for idx, row in enumerate(pts):
            misfit = post.y_obs - self.forward(row)
            vals[idx] = (float(misfit @ misfit) / (2.0 * post.sigma_eta ** 2)
                         + float(row @ row) / (2.0 * post.sigma0 ** 2))
        return vals

    def evaluate(self, theta):
        pts, scalar = self._batch(theta)
        if self.n_workers > 1 and pts.shape[0] > 1:
            vals = self._evaluate_pooled(pts)
        else:
            vals = self._evaluate_rows(pts)
        return self._out(vals, scalar)

    def _evaluate_pooled(self, pts: np.ndarray) -> np.ndarray:
        from concurrent.futures import ProcessPoolExecutor

        if self._pool is None:
            self._pool = ProcessPoolExecutor(max_workers=self.n_workers,
                                             initializer=_pool_init,
                                             initargs=(self.posterior,))
        chunks = np.array_split(pts, min(4 * self.n_workers, pts.shape[0]))
        return np.concatenate(list(self._pool.map(_pool_eval, chunks)))


_POOL_POTENTIAL: DarcyPotential | None = None


def _pool_init(posterior: DarcyPosterior) -> None:
    global _POOL_POTENTIAL
    _POOL_POTENTIAL = DarcyPotential(posterior)


def _pool_eval(rows: np.ndarray) -> np.ndarray:
    return _POOL_POTENTIAL._evaluate_rows(np.atleast_2d(rows))


def darcy_potential(posterior: DarcyPosterior) -> DarcyPotential:
    return DarcyPotential(posterior)


def synthesize_observations(seed: int, grid: Grid2D, basis: KLBasis, sigma0: float = 5.0,
                            sigma_eta: float = 0.25,
                            refine: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Draw theta_ref from the prior and observe it on a refined grid with noise.

    The forward solve runs on a grid refined by ``refine`` so the synthetic
    data does not share the inversion grid's discretization error; the
    observation points are the same physical locations (indices scale by
    ``refine``).
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    theta_ref = sigma0 * rng.standard_normal(basis.n_modes)
    fine = Grid2D(grid.n * refine)
    coarse_nodes = observation_nodes(grid)
    fine_posterior_nodes = coarse_nodes * refine
    op = _ForwardOperator(fine, basis)
    p_full = pressure_with_boundary(op.solve(theta_ref))
    y_clean = observe(p_full, fine, fine_posterior_nodes)
    y_obs = y_clean + sigma_eta * rng.standard_normal(y_clean.shape[0])
    return theta_ref, y_obs


def build_posterior(seed: int, n: int = 80, n_theta: int = 32, sigma0: float = 5.0,
                    sigma_eta: float = 0.25) -> DarcyPosterior:
    """Complete reproducible problem instance from a seed."""
    grid = Grid2D(n)
    basis = kl_eigenpairs(n_theta)
    theta_ref, y_obs = synthesize_observations(seed, grid, basis, sigma0, sigma_eta)
    return DarcyPosterior(basis, grid, observation_nodes(grid), y_obs, sigma0, sigma_eta,
                          theta_ref, seed)


def save_problem(posterior: DarcyPosterior, path) -> None:
    doc = {
        "seed": posterior.seed,
        "n": posterior.grid.n,
        "n_theta": posterior.basis.n_modes,
        "tau": posterior.basis.tau,
        "decay": posterior.basis.decay,
        "sigma0": posterior.sigma0,
        "sigma_eta": posterior.sigma_eta,
        "obs_nodes": posterior.obs_nodes.tolist(),
        "theta_ref": None if posterior.theta_ref is None else posterior.theta_ref.tolist(),
        "y_obs": posterior.y_obs.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_problem(path) -> DarcyPosterior:
    doc = json.loads(Path(path).read_text())
    basis = kl_eigenpairs(doc["n_theta"], doc["tau"], doc["decay"])
    theta_ref = None if doc["theta_ref"] is None else np.array(doc["theta_ref"])
    return DarcyPosterior(basis, Grid2D(doc["n"]), np.array(doc["obs_nodes"], dtype=int),
                          np.array(doc["y_obs"]), doc["sigma0"], doc["sigma_eta"],
                          theta_ref, doc["seed"])


def target_from_spec(spec: dict) -> DarcyPotential:
    """Darcy target from a run-configuration document."""
    if "problem_file" in spec:
        posterior = load_problem(spec["problem_file"])
    else:
        posterior = build_posterior(int(spec.get("problem_seed", 0)),
                                    n=int(spec.get("n", 80)),
                                    n_theta=int(spec.get("dim", 32)),
                                    sigma0=float(spec.get("sigma0", 5.0)),
                                    sigma_eta=float(spec.get("sigma_eta", 0.25)))
    return DarcyPotential(posterior)

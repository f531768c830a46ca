"""Quantitative diagnostics: grid marginals, total-variation distance, field errors.

Accuracy on a 2-D marginal is measured as the TV distance between cell-center
densities on a fixed box; the boxes below cover at least 98% of each
reference's mass at 200x200 resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mixture import MixtureState
from .targets import TargetPotential

DEFAULT_RESOLUTION = 200

# Evaluation boxes per benchmark target (xlo, xhi, ylo, yhi).
DEFAULT_BOXES = {
    "case_a": (-10.0, 10.0, -10.0, 10.0),
    "case_b": (-2.0, 2.0, -2.0, 2.0),
    "case_c": (-3.0, 3.0, -1.0, 4.0),
    "funnel": (-10.0, 10.0, -15.0, 15.0),
}


class GridMismatchError(ValueError):
    """TV distance requires identical evaluation grids."""


@dataclass(frozen=True)
class GridDensity2D:
    """Cell-center density values on a rectangular box.

    Attributes:
        x_edges: (xlo, xhi); y_edges: (ylo, yhi); values: (nx, ny) array
        indexed [ix, iy]; cell_area: product of the cell sides.
    """

    x_edges: tuple[float, float]
    y_edges: tuple[float, float]
    values: np.ndarray

    @property
    def cell_area(self) -> float:
        nx, ny = self.values.shape
        return ((self.x_edges[1] - self.x_edges[0]) / nx
                * (self.y_edges[1] - self.y_edges[0]) / ny)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.values.shape
        hx = (self.x_edges[1] - self.x_edges[0]) / nx
        hy = (self.y_edges[1] - self.y_edges[0]) / ny
        xs = self.x_edges[0] + hx * (np.arange(nx) + 0.5)
        ys = self.y_edges[0] + hy * (np.arange(ny) + 0.5)
        return xs, ys

    def mass(self) -> float:
        return float(np.sum(self.values)) * self.cell_area

    def points(self) -> np.ndarray:
        """(nx*ny, 2) cell centers in C order matching values.ravel()."""
        xs, ys = self.centers()
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])


def grid_for(box: tuple[float, float, float, float],
             resolution: int = DEFAULT_RESOLUTION) -> GridDensity2D:
    """Empty grid (zero values) on the given box, used as a grid spec."""
    return GridDensity2D((box[0], box[1]), (box[2], box[3]),
                         np.zeros((resolution, resolution)))


def default_grid(target_name: str, resolution: int = DEFAULT_RESOLUTION) -> GridDensity2D:
    return grid_for(DEFAULT_BOXES[target_name], resolution)


def mixture_marginal_2d(state: MixtureState, dims: tuple[int, int],
                        grid: GridDensity2D) -> GridDensity2D:
    """Exact 2-D marginal of the mixture on the grid.

    The marginal of a Gaussian mixture is the mixture of the (dims, dims)
    sub-Gaussians: each component contributes w_k N2(x; m_k[dims], C_k[dims]).
    """
    i, j = dims
    if i == j or i >= state.dim or j >= state.dim:
        raise ValueError("dims must be two distinct coordinates of the state")
    pts = grid.points()
    vals = np.zeros(pts.shape[0])
    w = state.weights
    for k in range(state.n_components):
        cov = state.sqrt_factors[k] @ state.sqrt_factors[k].T
        sub = cov[np.ix_([i, j], [i, j])]
        mu = state.means[k, [i, j]]
        det = sub[0, 0] * sub[1, 1] - sub[0, 1] * sub[1, 0]
        inv = np.array([[sub[1, 1], -sub[0, 1]], [-sub[1, 0], sub[0, 0]]]) / det
        delta = pts - mu
        quad = np.einsum("nd,de,ne->n", delta, inv, delta)
        vals += w[k] * np.exp(-0.5 * quad) / (2.0 * np.pi * np.sqrt(det))
    return GridDensity2D(grid.x_edges, grid.y_edges, vals.reshape(grid.values.shape))


def reference_marginal_2d(target: TargetPotential, grid: GridDensity2D) -> GridDensity2D:
    """Analytic reference marginal on the grid, normalized there if needed."""
    vals = np.asarray(target.reference_marginal_2d(grid.points()), dtype=float)
    vals = vals.reshape(grid.values.shape)
    if not target.marginal_is_normalized:
        vals = vals / (np.sum(vals) * grid.cell_area)
    return GridDensity2D(grid.x_edges, grid.y_edges, vals)


def normalized_on_grid(density: GridDensity2D) -> GridDensity2D:
    """Rescale so the in-box mass is exactly 1.

    TV comparisons on a truncating box need comparable masses on both sides;
    rescaling turns them into conditional-on-box densities.  For boxes that
    already hold ~all the mass this is a no-op up to rounding.
    """
    return GridDensity2D(density.x_edges, density.y_edges, density.values / density.mass())


def marginal_tv_error(state: MixtureState, target: TargetPotential, target_name: str,
                      resolution: int = DEFAULT_RESOLUTION,
                      reference: GridDensity2D | None = None) -> float:
    """TV between the state's (0, 1) marginal and the target's reference,
    both normalized on the target's default evaluation box."""
    grid = reference if reference is not None else default_grid(target_name, resolution)
    if reference is None:
        reference = reference_marginal_2d(target, grid)
    estimate = normalized_on_grid(mixture_marginal_2d(state, (0, 1), grid))
    return tv_distance(estimate, reference)


def tv_distance(p: GridDensity2D, q: GridDensity2D) -> float:
    """Half the integrated absolute difference of cell-center densities."""
    if p.x_edges != q.x_edges or p.y_edges != q.y_edges or p.values.shape != q.values.shape:
        raise GridMismatchError("densities live on different grids")
    return 0.5 * float(np.sum(np.abs(p.values - q.values))) * p.cell_area


def scalar_marginal_stats(state: MixtureState, dim: int) -> tuple[float, float]:
    """Mean and variance of a single coordinate of the mixture."""
    if dim >= state.dim:
        raise ValueError("coordinate index out of range")
    w = state.weights
    means = state.means[:, dim]
    variances = np.einsum("kj,kj->k", state.sqrt_factors[:, dim, :],
                          state.sqrt_factors[:, dim, :])
    mean = float(w @ means)
    var = float(w @ (variances + (means - mean) ** 2))
    return mean, var


@dataclass(frozen=True)
class FieldErrorReport:
    """Per-component inverse-problem diagnostics, grouped by symmetry mode."""

    groups: np.ndarray          # (K,) 0 = closest to truth, 1 = closest to mirror
    relative_errors: np.ndarray  # (K,) field error against the assigned reference
    misfits: np.ndarray         # (K,) potential value at each component mean
    cov_frobenius: np.ndarray   # (K,)
    weights: np.ndarray         # (K,)


def darcy_errors(state: MixtureState, posterior, theta_ref: np.ndarray) -> FieldErrorReport:
    """Compare component means against the truth and its mirror image.

    Relative error is ||log a(m_k) - log a(theta_star)||_2 / ||log a(theta_star)||_2
    on the solver's node lattice, with theta_star the closer of the truth
    and its mirror (sign-flipped odd-l1 coefficients).
    """
    from . import darcy  # local import to keep the module graph acyclic

    theta_ref = np.asarray(theta_ref, dtype=float)
    mirror_ref = darcy.mirror_coeffs(theta_ref, posterior.basis)
    nodes = posterior.grid.node_points()
    field_true = darcy.log_permeability(theta_ref, posterior.basis, nodes)
    field_mirror = darcy.log_permeability(mirror_ref, posterior.basis, nodes)
    refs = (field_true, field_mirror)
    ref_norms = (float(np.linalg.norm(field_true)), float(np.linalg.norm(field_mirror)))

    potential = darcy.darcy_potential(posterior)
    k = state.n_components
    groups = np.empty(k, dtype=int)
    rel = np.empty(k)
    misfit = np.empty(k)
    cov_fro = np.empty(k)
    for i in range(k):
        field_i = darcy.log_permeability(state.means[i], posterior.basis, nodes)
        dists = [float(np.linalg.norm(field_i - r)) for r in refs]
        g = int(np.argmin(dists))
        groups[i] = g
        rel[i] = dists[g] / ref_norms[g]
        misfit[i] = float(potential.evaluate(state.means[i]))
        cov_fro[i] = float(np.linalg.norm(state.sqrt_factors[i] @ state.sqrt_factors[i].T))
    return FieldErrorReport(groups, rel, misfit, cov_fro, state.weights.copy())


def save_grid(grid: GridDensity2D, path) -> None:
    """Dense delimited matrix with a two-line header (shape, axis ranges)."""
    nx, ny = grid.values.shape
    header = (f"# {nx} {ny}\n"
              f"# {grid.x_edges[0]!r} {grid.x_edges[1]!r} "
              f"{grid.y_edges[0]!r} {grid.y_edges[1]!r}")
    np.savetxt(path, grid.values, header=header, comments="", delimiter="\t")


def load_grid(path) -> GridDensity2D:
    with open(path) as fh:
        shape_line = fh.readline().strip().lstrip("# ").split()
        range_line = fh.readline().strip().lstrip("# ").split()
    values = np.loadtxt(path, skiprows=2, delimiter="\t", ndmin=2)
    nx, ny = int(shape_line[0]), int(shape_line[1])
    if values.shape != (nx, ny):
        raise ValueError("grid file shape header disagrees with its data")
    xr = (float(range_line[0]), float(range_line[1]))
    yr = (float(range_line[2]), float(range_line[3]))
    return GridDensity2D(xr, yr, values)

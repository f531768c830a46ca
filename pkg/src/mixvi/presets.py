"""Benchmark preset manifests.

A manifest is a plain JSON-able dict that fully determines a run: integrator
configuration, target specification, initial-state specification, and the
metric schedule.  Presets cover the 2/10/50-dimensional benchmark cases, the
funnel, the Darcy inversions, and the sensitivity grid (shifted inits, mode
counts, schedulers, annealing settings).
"""

from __future__ import annotations

import copy


# Seeded multimodal layout with every mode inside the annealing exploration
# radius; arbitrary seeds can put modes out of reach of any K=40 run.
DEFAULT_LAYOUT_SEED = 2280


def _case_manifest(name: str, dim: int, *, anneal: bool, n_iterations: int = 500,
                   n_components: int = 40, layout_seed: int = DEFAULT_LAYOUT_SEED) -> dict:
    manifest = {
        "config": {
            "n_samples": 4 * dim,
            "n_iterations": n_iterations,
            "dt_max": 0.9,
            "beta": 0.9,
            "scheduler": "stable_cosine",
            "eta_min": 0.1,
            "anneal": {"enabled": anneal, "n_steps": 500, "alpha": 0.1},
            "seed": 0,
            "snapshot_every": 0,
            "exact_expectations": False,
        },
        "target": {"name": name, "dim": dim},
        "init": {"kind": "seeded-standard", "K": n_components,
                 "mean_scale": 1.0, "cov_scale": 1.0, "mean_shift": 0.0},
        "metrics": {"which": ["tv"], "every": 10},
    }
    if name == "case_a":
        manifest["target"]["layout_seed"] = layout_seed
    return manifest


def _funnel_manifest(dim: int) -> dict:
    manifest = _case_manifest("funnel", dim, anneal=False, n_iterations=2000)
    manifest["metrics"]["which"] = ["tv", "scalar_stats"]
    return manifest


def _darcy_manifest(n: int, n_theta: int, n_iterations: int) -> dict:
    return {
        "config": {
            "n_samples": 4 * n_theta,
            "n_iterations": n_iterations,
            "dt_max": 0.9,
            "beta": 0.9,
            "scheduler": "stable_cosine",
            "eta_min": 0.1,
            "anneal": {"enabled": False, "n_steps": 500, "alpha": 0.1},
            "seed": 0,
            "snapshot_every": 0,
            "exact_expectations": False,
        },
        "target": {"name": "darcy", "dim": n_theta, "n": n, "problem_seed": 0,
                   "sigma0": 5.0, "sigma_eta": 0.25},
        "init": {"kind": "seeded-standard", "K": 5,
                 "mean_scale": 5.0, "cov_scale": 5.0, "mean_shift": 0.0},
        "metrics": {"which": ["darcy"], "every": 10},
    }


def _build_all() -> dict[str, dict]:
    presets: dict[str, dict] = {}
    for dim, tag in ((2, "2d"), (10, "10d"), (50, "50d")):
        presets[f"case_a_{tag}"] = _case_manifest("case_a", dim, anneal=True)
        presets[f"case_b_{tag}"] = _case_manifest("case_b", dim, anneal=False)
        presets[f"case_c_{tag}"] = _case_manifest("case_c", dim, anneal=True)
        presets[f"funnel_{tag}"] = _funnel_manifest(dim)

    presets["darcy_k5"] = _darcy_manifest(n=80, n_theta=32, n_iterations=500)
    presets["darcy_desk"] = _darcy_manifest(n=40, n_theta=16, n_iterations=200)

    # Sensitivity grid around the 10-dimensional multimodal case.
    base = _case_manifest("case_a", 10, anneal=True)
    for shift, tag in ((2.0, "plus2"), (-2.0, "minus2")):
        shifted = copy.deepcopy(base)
        shifted["init"]["mean_shift"] = shift
        presets[f"case_a_10d_shift_{tag}"] = shifted
    for k in (10, 20, 40):
        sized = copy.deepcopy(base)
        sized["init"]["K"] = k
        presets[f"case_a_10d_K{k}"] = sized
    for sched in ("stable_cosine", "stable_linear", "exponential"):
        scheduled = copy.deepcopy(base)
        scheduled["config"]["scheduler"] = sched
        presets[f"case_a_10d_sched_{sched.removeprefix('stable_')}"] = scheduled
    for alpha, tag in ((None, "none"), (0.5, "a05"), (0.1, "a01")):
        annealed = copy.deepcopy(base)
        if alpha is None:
            annealed["config"]["anneal"]["enabled"] = False
        else:
            annealed["config"]["anneal"]["alpha"] = alpha
        presets[f"case_a_10d_anneal_{tag}"] = annealed

    # Tiny deterministic run used by the smoke/reproducibility checks.
    presets["smoke_gaussian_2d"] = {
        "config": {
            "n_samples": 8, "n_iterations": 40, "dt_max": 0.9, "beta": 0.9,
            "scheduler": "stable_cosine", "eta_min": 0.1,
            "anneal": {"enabled": False, "n_steps": 500, "alpha": 0.1},
            "seed": 0, "snapshot_every": 20, "exact_expectations": False,
        },
        "target": {"name": "gaussian", "dim": 2, "mean": [1.0, -1.0],
                   "cov": [[2.0, 0.3], [0.3, 0.5]]},
        "init": {"kind": "seeded-standard", "K": 2,
                 "mean_scale": 1.0, "cov_scale": 1.0, "mean_shift": 0.0},
        "metrics": {"which": [], "every": 0},
    }
    return presets


_PRESETS = _build_all()


def preset_names() -> list[str]:
    return sorted(_PRESETS)


def build_manifest(name: str) -> dict:
    if name not in _PRESETS:
        raise KeyError(f"unknown preset {name!r}; see `mixvi presets`")
    return copy.deepcopy(_PRESETS[name])

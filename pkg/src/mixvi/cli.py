"""Command-line entry point: run / presets / analyze / plotdata.

Data goes to files, progress to stderr.  Exit codes: 0 success, 2 bad
configuration, 3 numerical failure, 4 I/O failure.  Outputs are plain
delimited text: tables with a single header row, matrices with a two-line
header (shape, axis ranges).  Two invocations of the same manifest produce
byte-identical trajectory tables.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, darcy, metrics, mixture, presets, spd
from .integrator import (AnnealConfig, IntegratorConfig, NonFiniteTargetError,
                         UnsupportedTargetError, run)
from .targets import make_target

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_NUMERICAL_ERRORS = (NonFiniteTargetError, darcy.SolverDivergenceError,
                     spd.NotPositiveDefiniteError, spd.NoConvergenceError,
                     spd.SingularFactorError, UnsupportedTargetError)

OUTPUT_ROOT_ENV = "MIXVI_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    """Shortest round-trip decimal representation."""
    return repr(float(x))


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_table(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) if isinstance(c, (int, str)) else _fmt(c) for c in row))
    path.write_text("\n".join(lines) + "\n")


def _read_table(path: Path) -> tuple[list[str], list[list[str]]]:
    lines = path.read_text().splitlines()
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def config_from_doc(doc: dict) -> IntegratorConfig:
    anneal_doc = doc.get("anneal", {})
    anneal = AnnealConfig(enabled=bool(anneal_doc.get("enabled", False)),
                          n_steps=int(anneal_doc.get("n_steps", 500)),
                          alpha=float(anneal_doc.get("alpha", 0.1)),
                          n_samples=anneal_doc.get("n_samples"))
    return IntegratorConfig(n_samples=int(doc["n_samples"]),
                            n_iterations=int(doc["n_iterations"]),
                            dt_max=float(doc.get("dt_max", 0.9)),
                            beta=float(doc.get("beta", 0.9)),
                            scheduler=str(doc.get("scheduler", "stable_cosine")),
                            eta_min=float(doc.get("eta_min", 0.1)),
                            anneal=anneal,
                            seed=int(doc.get("seed", 0)),
                            snapshot_every=int(doc.get("snapshot_every", 0)),
                            exact_expectations=bool(doc.get("exact_expectations", False)))


def initial_state_from_doc(doc: dict, dim: int, seed: int) -> mixture.MixtureState:
    kind = doc.get("kind", "seeded-standard")
    if kind == "explicit":
        return mixture.load_state(doc["path"])
    if kind == "seeded-standard":
        return mixture.standard_init(int(doc["K"]), dim, seed=seed,
                                     mean_scale=float(doc.get("mean_scale", 1.0)),
                                     cov_scale=float(doc.get("cov_scale", 1.0)),
                                     mean_shift=float(doc.get("mean_shift", 0.0)))
    raise ConfigError(f"unknown initial-state kind {kind!r}")


class _MetricRecorder:
    """Computes the scheduled metrics inside the run callback."""

    def __init__(self, which: list[str], every: int, target, n_iterations: int):
        self.every = every
        self.rows: list[list] = []
        self.header: list[str] = ["iteration"]
        self.tasks = []
        self.n_iterations = n_iterations
        for name in which:
            if name == "tv":
                grid = metrics.default_grid(target_name_for(target))
                reference = metrics.reference_marginal_2d(target, grid)
                self.tasks.append(("tv", (grid, reference)))
                self.header.append("tv")
            elif name == "scalar_stats":
                self.tasks.append(("scalar_stats", None))
                self.header += ["mean_0", "var_0"]
            elif name == "darcy":
                self.tasks.append(("darcy", None))
                self.header.append("median_misfit")
            else:
                raise ConfigError(f"unknown metric {name!r}")

    def due(self, n: int) -> bool:
        if self.every <= 0 or not self.tasks:
            return False
        return n % self.every == 0 or n == self.n_iterations

    def __call__(self, n, state, diag, target=None):
        if not self.due(n):
            return
        row: list = [n]
        for name, payload in self.tasks:
            if name == "tv":
                grid, reference = payload
                est = metrics.normalized_on_grid(metrics.mixture_marginal_2d(state, (0, 1), grid))
                row.append(metrics.tv_distance(est, reference))
            elif name == "scalar_stats":
                mean, var = metrics.scalar_marginal_stats(state, 0)
                row += [mean, var]
            elif name == "darcy":
                misfits = np.asarray(target.evaluate(state.means), dtype=float)
                row.append(float(np.median(misfits)))
        self.rows.append(row)


def target_name_for(target) -> str:
    from .targets import BananaPotential, FunnelPotential, MultimodalPotential, RingPotential

    table = {MultimodalPotential: "case_a", RingPotential: "case_b",
             BananaPotential: "case_c", FunnelPotential: "funnel"}
    for cls, name in table.items():
        if isinstance(target, cls):
            return name
    raise ConfigError("this metric needs a benchmark target with a 2-D reference")


def _resolve_out(out_arg: str | None, default_name: str) -> Path:
    if out_arg:
        return Path(out_arg)
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return Path(root) / default_name


def cmd_run(args) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        _log(f"error: manifest not found: {manifest_path}")
        return EXIT_CONFIG
    try:
        manifest = json.loads(manifest_path.read_text())
        if args.seed is not None:
            manifest["config"]["seed"] = args.seed
        config = config_from_doc(manifest["config"])
        target = make_target(manifest["target"])
        if isinstance(target, darcy.DarcyPotential) and args.threads != 1:
            target.n_workers = args.threads or (os.cpu_count() or 1)
        state = initial_state_from_doc(manifest.get("init", {}), target.dim, config.seed)
        metric_doc = manifest.get("metrics", {"which": [], "every": 0})
        recorder = _MetricRecorder(list(metric_doc.get("which", [])),
                                   int(metric_doc.get("every", 0)), target,
                                   config.n_iterations)
    except (KeyError, ValueError, TypeError, OSError, json.JSONDecodeError) as err:
        _log(f"error: bad manifest: {err}")
        return EXIT_CONFIG

    out = _resolve_out(args.out, manifest_path.stem)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
        if isinstance(target, darcy.DarcyPotential):
            darcy.save_problem(target.posterior, out / "problem.json")
    except OSError as err:
        _log(f"error: cannot prepare output directory: {err}")
        return EXIT_IO

    def callback(n, st, diag):
        recorder(n, st, diag, target=target)
        if n % max(1, config.n_iterations // 10) == 0:
            _log(f"iteration {n}/{config.n_iterations} dt={diag.dt:.3g}")

    try:
        final, trajectory = run(config, target, state, callback=callback)
    except _NUMERICAL_ERRORS as err:
        _log(f"error: numerical failure: {err}")
        return EXIT_NUMERICAL

    try:
        k = state.n_components
        header = (["n", "dt", "eta", "max_grad_norm"]
                  + [f"w_{i+1}" for i in range(k)] + [f"fbar_{i+1}" for i in range(k)])
        rows = [[d.n, d.dt, d.eta, d.max_grad_norm, *d.weights, *d.f_bars]
                for d in trajectory.steps]
        _write_table(out / "trajectory.csv", header, rows)
        _write_table(out / "timings.csv", ["n", "wall_time"],
                     [[d.n, d.wall_time] for d in trajectory.steps])
        if recorder.rows:
            _write_table(out / "metrics.csv", recorder.header, recorder.rows)
        for n, snap in trajectory.snapshots:
            mixture.save_state(snap, out / f"state_{n:06d}.json")
        mixture.save_state(final, out / "state_final.json")
    except OSError as err:
        _log(f"error: cannot write outputs: {err}")
        return EXIT_IO
    _log(f"run complete: {out}")
    return 0


def cmd_presets(args) -> int:
    names = presets.preset_names()
    if args.json:
        print(json.dumps({n: presets.build_manifest(n) for n in names}, indent=1))
    else:
        for name in names:
            print(name)
    return 0


def cmd_analyze(args) -> int:
    out = _resolve_out(args.out, f"analyze_{args.kind}")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        _log(f"error: cannot create output directory: {err}")
        return EXIT_IO
    try:
        if args.kind == "noise_free":
            diag = [float(x) for x in args.sigma0_diag.split(",")]
            sigma0 = np.diag(diag)
            v0 = np.full(len(diag), args.v0)
            rows = []
            for eps in args.eps:
                report = analysis.noise_free_experiment(sigma0, v0, args.dt_max,
                                                        args.beta, eps)
                rows.append([eps, report.iterations])
            _write_table(out / "noise_free.csv", ["eps", "iterations"], rows)
            trace = analysis.noise_free_experiment(sigma0, v0, args.dt_max, args.beta,
                                                   min(args.eps))
            _write_table(out / "noise_free_trace.csv", ["n", "sigma_err", "v_norm"],
                         [[i, se, vn] for i, (se, vn)
                          in enumerate(zip(trace.sigma_errors, trace.v_norms))])
        elif args.kind == "pathology":
            # (a) damping lost with dt_max alone from a large start;
            # (b) oscillation with the stability term alone from a start near 1.
            rep_a = analysis.single_term_pathologies(args.sigma0, args.dt_max, args.beta)
            rep_b = analysis.single_term_pathologies(args.sigma0_near_one, args.dt_max,
                                                     args.beta)
            rows = [
                ["a_dt_max_only", "sigma_0", args.sigma0],
                ["a_dt_max_only", "sigma_1", rep_a.dt_max_only_first],
                ["a_dt_max_only", "full_rule_monotone", int(rep_a.full_rule_monotone)],
                ["b_beta_only", "sigma_0", args.sigma0_near_one],
                ["b_beta_only", "interval_lo", rep_b.beta_interval[0]],
                ["b_beta_only", "interval_hi", rep_b.beta_interval[1]],
                ["b_beta_only", "sigma_1", rep_b.beta_only_first],
                ["b_beta_only", "escapes", int(rep_b.beta_only_escapes)],
                ["b_beta_only", "full_rule_monotone", int(rep_b.full_rule_monotone)],
            ]
            _write_table(out / "pathology.csv", ["section", "name", "value"], rows)
        elif args.kind == "stochastic":
            noise = analysis.NoiseSpec(args.noise, args.noise)
            sigma0 = np.diag([float(x) for x in args.sigma0_diag.split(",")])
            v0 = np.full(sigma0.shape[0], args.v0)
            traces = _stochastic_traces(sigma0, v0, noise, args)
            rows = []
            for tr in traces:
                for n in range(len(tr.dts)):
                    rows.append([tr.seed, n + 1, tr.sigma_errors[n + 1],
                                 tr.v_norms[n + 1], tr.dts[n]])
            _write_table(out / "stochastic.csv",
                         ["seed", "n", "sigma_err", "v_norm", "dt"], rows)
        else:
            _log(f"error: unknown analysis kind {args.kind!r}")
            return EXIT_CONFIG
    except _NUMERICAL_ERRORS + (analysis.IterationCapError,) as err:
        _log(f"error: numerical failure: {err}")
        return EXIT_NUMERICAL
    except ValueError as err:
        _log(f"error: bad parameters: {err}")
        return EXIT_CONFIG
    _log(f"analysis written to {out}")
    return 0


def _stochastic_traces(sigma0, v0, noise, args):
    """Seed sweep for the noisy recursion; seeds are independent, so worker
    processes (if requested) change nothing but wall time."""
    workers = args.threads or (os.cpu_count() or 1)
    seeds = list(range(args.seeds))
    if workers <= 1 or len(seeds) <= 1:
        return analysis.stochastic_experiment(sigma0, v0, noise, args.scheduler,
                                              args.steps, seeds, args.dt_max, args.beta)
    from concurrent.futures import ProcessPoolExecutor
    from functools import partial

    one = partial(_one_stochastic_trace, sigma0, v0, noise, args.scheduler, args.steps,
                  args.dt_max, args.beta)
    with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
        return list(pool.map(one, seeds))


def _one_stochastic_trace(sigma0, v0, noise, scheduler, steps, dt_max, beta, seed):
    return analysis.stochastic_experiment(sigma0, v0, noise, scheduler, steps, [seed],
                                          dt_max, beta)[0]


def _load_run_dir(run_dir: Path):
    manifest = json.loads((run_dir / "manifest.json").read_text())
    final = mixture.load_state(run_dir / "state_final.json")
    return manifest, final


def cmd_plotdata(args) -> int:
    run_dir = Path(args.run)
    out = Path(args.out) if args.out else run_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.which == "marginal":
            manifest, final = _load_run_dir(run_dir)
            target = make_target(manifest["target"])
            grid = metrics.default_grid(target_name_for(target))
            est = metrics.mixture_marginal_2d(final, (0, 1), grid)
            metrics.save_grid(est, out / "marginal_density.tsv")
            try:
                ref = metrics.reference_marginal_2d(target, grid)
                metrics.save_grid(ref, out / "reference_density.tsv")
            except NotImplementedError:
                pass
            rows = [[i + 1, w, m0, m1] for i, (w, m0, m1)
                    in enumerate(zip(final.weights, final.means[:, 0], final.means[:, 1]))]
            _write_table(out / "component_means.csv", ["k", "weight", "mean_1", "mean_2"], rows)
        elif args.which == "tv_series":
            header, rows = _read_table(run_dir / "metrics.csv")
            idx = header.index("tv")
            _write_table(out / "tv_series.csv", ["iteration", "tv"],
                         [[int(r[0]), float(r[idx])] for r in rows])
        elif args.which == "weights":
            header, rows = _read_table(run_dir / "trajectory.csv")
            w_cols = [i for i, h in enumerate(header) if h.startswith("w_")]
            _write_table(out / "weights.csv",
                         ["iteration"] + [header[i] for i in w_cols],
                         [[int(r[0])] + [float(r[i]) for i in w_cols] for r in rows])
        elif args.which == "darcy_fields":
            manifest, final = _load_run_dir(run_dir)
            posterior = darcy.load_problem(run_dir / "problem.json")
            _write_darcy_fields(posterior, final, out)
        else:
            _log(f"error: unknown plotdata kind {args.which!r}")
            return EXIT_CONFIG
    except (OSError, FileNotFoundError) as err:
        _log(f"error: missing run artifacts: {err}")
        return EXIT_IO
    except (KeyError, ValueError) as err:
        _log(f"error: bad run artifacts: {err}")
        return EXIT_CONFIG
    _log(f"plot data written to {out}")
    return 0


def _field_grid(values: np.ndarray) -> metrics.GridDensity2D:
    return metrics.GridDensity2D((0.0, 1.0), (0.0, 1.0), values)


def _write_darcy_fields(posterior, final, out: Path) -> None:
    if posterior.theta_ref is None:
        raise ValueError("problem document carries no reference coefficients")
    nodes = posterior.grid.node_points()
    side = posterior.grid.n + 1
    report = metrics.darcy_errors(final, posterior, posterior.theta_ref)

    def field(theta):
        return darcy.log_permeability(theta, posterior.basis, nodes).reshape(side, side)

    metrics.save_grid(_field_grid(field(posterior.theta_ref)), out / "field_truth.tsv")
    metrics.save_grid(_field_grid(field(darcy.mirror_coeffs(posterior.theta_ref,
                                                            posterior.basis))),
                      out / "field_mirror.tsv")
    for group, tag in ((0, "truth"), (1, "mirror")):
        members = report.groups == group
        if not np.any(members):
            continue
        w = final.weights[members]
        mean_theta = (w / w.sum()) @ final.means[members]
        metrics.save_grid(_field_grid(field(mean_theta)), out / f"field_group_{tag}.tsv")
    _write_table(out / "mode_groups.csv",
                 ["k", "group", "relative_error", "misfit", "cov_frobenius", "weight"],
                 [[i + 1, int(g), e, m, c, w] for i, (g, e, m, c, w)
                  in enumerate(zip(report.groups, report.relative_errors, report.misfits,
                                   report.cov_frobenius, report.weights))])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixvi",
                                     description="Gaussian-mixture variational inference")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a run manifest")
    p_run.add_argument("--manifest", required=True)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--seed", type=int, default=None, help="override the manifest seed")
    p_run.add_argument("--threads", type=int, default=1,
                       help="worker processes for batched PDE solves (0 = auto)")
    p_run.set_defaults(func=cmd_run)

    p_presets = sub.add_parser("presets", help="list benchmark presets")
    p_presets.add_argument("--json", action="store_true", help="dump full manifests")
    p_presets.set_defaults(func=cmd_presets)

    p_an = sub.add_parser("analyze", help="run a convergence-analysis experiment")
    p_an.add_argument("kind", choices=["noise_free", "pathology", "stochastic"])
    p_an.add_argument("--out", default=None)
    p_an.add_argument("--sigma0-diag", default="1e6,1e-6",
                      help="comma-separated diagonal of the initial covariance")
    p_an.add_argument("--sigma0", type=float, default=100.0,
                      help="scalar initial covariance (pathology section a)")
    p_an.add_argument("--sigma0-near-one", type=float, default=1.1,
                      help="scalar initial covariance inside the oscillation band (section b)")
    p_an.add_argument("--v0", type=float, default=1.0)
    p_an.add_argument("--dt-max", type=float, default=0.9)
    p_an.add_argument("--beta", type=float, default=0.9)
    p_an.add_argument("--eps", type=float, nargs="+", default=[1e-4, 1e-6, 1e-8])
    p_an.add_argument("--noise", type=float, default=0.5)
    p_an.add_argument("--scheduler", default="one_over_n")
    p_an.add_argument("--steps", type=int, default=5000)
    p_an.add_argument("--seeds", type=int, default=20)
    p_an.add_argument("--threads", type=int, default=1)
    p_an.set_defaults(func=cmd_analyze)

    p_plot = sub.add_parser("plotdata", help="emit plot-ready tables from a run directory")
    p_plot.add_argument("--run", required=True)
    p_plot.add_argument("--which", required=True,
                        choices=["marginal", "tv_series", "darcy_fields", "weights"])
    p_plot.add_argument("--out", default=None)
    p_plot.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

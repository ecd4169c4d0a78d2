"""Command-line interface: embedding runs, calibration dumps, population
quantities, convergence sweeps, tail-bound checks, and figure emission.

Every command writes a manifest.json (fully resolved configuration plus
package versions) into the output directory before any result file, so a run
can always be reproduced from its outputs alone.

Exit codes: 0 success; 2 validation error; 3 infeasible perplexity target;
4 non-finite loss during optimization; 5 sweep with every cell failed.
"""

from __future__ import annotations

import functools
import json
import os
import platform
import sys
from dataclasses import asdict

import click
import numpy as np

from . import __version__
from .affinities import calibrate_all, row_entropy
from .core_types import (
    SCHEMA_VERSION,
    RunConfig,
    format_float,
    read_points_csv,
    validate_dataset,
    validate_embedding,
    write_points_csv,
)
from .errors import (
    NonFiniteLoss,
    PerplexityInfeasible,
    TsneEqError,
    ValidationError,
)
from .experiments import (
    DistributionSpec,
    run_replica,
    summarize_records,
    tail_bound_check,
    validate_n_grid,
)
from .optimizer import OptimizerConfig, multistart_minimize
from .population import context_from_joint_points, context_from_measure, functional_I, sigma_field
from .core_types import Dataset, empirical_measure
from .stationarity import residual_discrete, residual_plugin

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_NONFINITE = 4
EXIT_ALL_FAILED = 5


def guarded(fn):
    """Map library exceptions to the documented exit-code taxonomy."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PerplexityInfeasible as exc:
            click.echo(f"error: {exc}; feasible perplexity band is (1, n-1)",
                       err=True)
            sys.exit(EXIT_INFEASIBLE)
        except NonFiniteLoss as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_NONFINITE)
        except ValidationError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except TsneEqError as exc:
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)

    return wrapper


def resolve_threads(threads):
    """--threads flag, then TSNE_EQ_THREADS, then 1. Informational: the
    numeric kernels run sequentially for determinism."""
    if threads is not None:
        return int(threads)
    return int(os.environ.get("TSNE_EQ_THREADS", "1"))


def write_manifest(out_dir, command: str, options: dict) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "manifest.json")
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "options": options,
        "versions": {
            "tsne_equilibrium": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    doc.pop("schema_version", None)
    return doc


def build_optimizer_config(options: dict, seed: int) -> OptimizerConfig:
    known = {f for f in OptimizerConfig.__dataclass_fields__}
    picked = {k: v for k, v in options.items() if k in known}
    picked["seed"] = seed
    return OptimizerConfig(**picked)


# ---------------------------------------------------------------------------
# deterministic SVG emission (hand-rolled: byte-stable, no plotting deps)


def _svg_header(width, height):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n')


def scatter_svg(points: np.ndarray, size: int = 480, pad: int = 24) -> str:
    """Equal-scaled 2-d scatter; coordinates formatted to fixed precision."""
    pts = np.atleast_2d(points)
    if pts.shape[1] != 2:
        raise ValidationError("scatter figures need a 2-d embedding")
    center = pts.mean(axis=0)
    half = float(np.max(np.abs(pts - center))) or 1.0
    scale = (size - 2 * pad) / (2 * half)
    parts = [_svg_header(size, size)]
    for x, y in pts:
        cx = pad + (x - center[0] + half) * scale
        cy = size - pad - (y - center[1] + half) * scale
        parts.append(f'<circle cx="{cx:.3f}" cy="{cy:.3f}" r="1.5" '
                     f'fill="black" fill-opacity="0.55"/>\n')
    parts.append("</svg>\n")
    return "".join(parts)


def curves_svg(series: dict, width: int = 560, height: int = 420,
               pad: int = 48) -> str:
    """Log-log polylines of (n, value) series with positive values."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    cleaned = {}
    for name, pts in series.items():
        kept = [(n, v) for n, v in pts if v is not None and v > 0]
        if len(kept) >= 2:
            cleaned[name] = kept
    parts = [_svg_header(width, height)]
    if cleaned:
        xs = np.log([n for pts in cleaned.values() for n, _ in pts])
        ys = np.log([v for pts in cleaned.values() for _, v in pts])
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(ys.min()), float(ys.max())
        xr = (x1 - x0) or 1.0
        yr = (y1 - y0) or 1.0

        def tx(v):
            return pad + (np.log(v) - x0) / xr * (width - 2 * pad)

        def ty(v):
            return height - pad - (np.log(v) - y0) / yr * (height - 2 * pad)

        parts.append(f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" '
                     f'height="{height - 2 * pad}" fill="none" stroke="#999"/>\n')
        for k, (name, pts) in enumerate(sorted(cleaned.items())):
            color = colors[k % len(colors)]
            coords = " ".join(f"{tx(n):.3f},{ty(v):.3f}" for n, v in pts)
            parts.append(f'<polyline points="{coords}" fill="none" '
                         f'stroke="{color}" stroke-width="1.5"/>\n')
            parts.append(f'<text x="{width - pad + 4}" y="{pad + 16 * (k + 1)}" '
                         f'font-size="10" fill="{color}" text-anchor="end">'
                         f"{name}</text>\n")
    parts.append("</svg>\n")
    return "".join(parts)


# ---------------------------------------------------------------------------
# commands


@click.group()
@click.version_option(version=__version__)
def main():
    """t-SNE in the proportional-perplexity regime: embeddings, population
    quantities, and convergence experiments."""


def common_options(fn):
    fn = click.option("--config", type=click.Path(exists=True), default=None,
                      help="JSON config; flags override its values.")(fn)
    fn = click.option("--seed", type=int, default=None, help="RNG seed.")(fn)
    fn = click.option("--out", type=click.Path(), default=".",
                      help="Output directory.")(fn)
    fn = click.option("--threads", type=int, default=None,
                      help="Worker count (informational; kernels run "
                           "sequentially for determinism).")(fn)
    fn = click.option("--format", "fmt", type=click.Choice(["csv", "json"]),
                      default="csv", help="Tabular output format.")(fn)
    return fn


def _resolved(config, **flags):
    """Merge config-file values and explicit CLI flags (flags win)."""
    merged = dict(load_json_config(config))
    for k, v in flags.items():
        if v is not None:
            merged[k] = v
    return merged


@main.command()
@click.argument("dataset", type=click.Path(exists=True))
@common_options
@click.option("--rho", type=float, default=None, help="Perplexity ratio (default 0.3).")
@click.option("--s", type=int, default=None, help="Output dimension (default 2).")
@click.option("--max-iters", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--restarts", type=int, default=None)
@click.option("--grad-tol", type=float, default=None)
@click.option("--use-exaggeration", is_flag=True, default=None)
@click.option("--header", is_flag=True, help="Dataset CSV has a header row.")
@click.option("--trace", "trace_path", type=click.Path(), default=None,
              help="Write the loss trace as CSV.")
@click.option("--figure", is_flag=True, help="Also emit a scatter SVG (s=2).")
@click.option("--dump-affinities", "dump_aff", type=click.Path(), default=None,
              help="Write per-row (sigma, entropy residual) CSV.")
@guarded
def embed(dataset, config, seed, out, threads, fmt, rho, s, max_iters,
          learning_rate, restarts, grad_tol, use_exaggeration, header,
          trace_path, figure, dump_aff):
    """Embed a CSV dataset: calibrate affinities and minimize the KL loss."""
    opts = _resolved(config, rho=rho, s=s, seed=seed, max_iters=max_iters,
                     learning_rate=learning_rate, restarts=restarts,
                     grad_tol=grad_tol, use_exaggeration=use_exaggeration)
    opts.setdefault("rho", 0.3)
    opts.setdefault("s", 2)
    opts.setdefault("seed", 0)
    opts.setdefault("restarts", 1)
    opts["threads"] = resolve_threads(threads)
    opts["dataset"] = os.path.abspath(dataset)
    write_manifest(out, "embed", opts)

    ds = validate_dataset(read_points_csv(dataset, header=header))
    p = calibrate_all(ds, opts["rho"], tol=opts.get("sigma_tol", 1e-10))
    if dump_aff is not None:
        target = p.target_log_perp
        with open(dump_aff, "w") as fh:
            fh.write("sigma,entropy_residual\n")
            for i in range(ds.n):
                resid = row_entropy(p.conditional[i]) - target
                fh.write(f"{format_float(p.sigma[i])},{format_float(resid)}\n")

    cfg = build_optimizer_config(opts, opts["seed"])
    res = multistart_minimize(p, cfg, restarts=opts["restarts"], s=opts["s"])

    write_points_csv(os.path.join(out, "embedding.csv"), res.embedding.points)
    write_json(os.path.join(out, "result.json"), {
        "final_loss": res.final_loss,
        "iters_run": res.iters_run,
        "final_grad_norm": res.final_grad_norm,
        "converged": res.converged,
        "n": ds.n, "d": ds.d, "s": opts["s"], "rho": opts["rho"],
    })
    if trace_path is not None:
        with open(trace_path, "w") as fh:
            fh.write("iter,loss\n")
            for it, lv in res.loss_trace:
                fh.write(f"{it},{format_float(lv)}\n")
    if figure:
        with open(os.path.join(out, "figure.svg"), "w") as fh:
            fh.write(scatter_svg(res.embedding.points))


@main.command()
@click.argument("dataset", type=click.Path(exists=True))
@common_options
@click.option("--rho", type=float, default=None)
@click.option("--header", is_flag=True)
@guarded
def affinities(dataset, config, seed, out, threads, fmt, rho, header):
    """Calibrate per-row bandwidths and report entropy residuals."""
    opts = _resolved(config, rho=rho)
    opts.setdefault("rho", 0.3)
    opts["threads"] = resolve_threads(threads)
    opts["dataset"] = os.path.abspath(dataset)
    write_manifest(out, "affinities", opts)

    ds = validate_dataset(read_points_csv(dataset, header=header))
    p = calibrate_all(ds, opts["rho"], tol=opts.get("sigma_tol", 1e-10))
    rows = [{"sigma": float(p.sigma[i]),
             "entropy_residual": float(row_entropy(p.conditional[i])
                                       - p.target_log_perp)}
            for i in range(ds.n)]
    if fmt == "json":
        write_json(os.path.join(out, "affinities.json"),
                   {"target_log_perp": p.target_log_perp, "rows": rows})
    else:
        with open(os.path.join(out, "affinities.csv"), "w") as fh:
            fh.write("sigma,entropy_residual\n")
            for r in rows:
                fh.write(f"{format_float(r['sigma'])},"
                         f"{format_float(r['entropy_residual'])}\n")


@main.command()
@click.argument("dataset", type=click.Path(exists=True))
@common_options
@click.option("--rho", type=float, default=None)
@click.option("--tol", type=float, default=1e-10)
@click.option("--header", is_flag=True)
@guarded
def sigma(dataset, config, seed, out, threads, fmt, rho, tol, header):
    """Population bandwidth field sigma* on the dataset's empirical measure."""
    opts = _resolved(config, rho=rho)
    opts.setdefault("rho", 0.3)
    opts["tol"] = tol
    opts["threads"] = resolve_threads(threads)
    opts["dataset"] = os.path.abspath(dataset)
    write_manifest(out, "sigma", opts)

    pts = read_points_csv(dataset, header=header)
    ctx = context_from_measure(empirical_measure(Dataset(points=pts)), opts["rho"])
    field = sigma_field(ctx, pts, tol=tol)
    if fmt == "json":
        write_json(os.path.join(out, "sigma_star.json"), {
            "sigma": [float(v) for v in field.values],
            "residual": [float(v) for v in field.residuals],
        })
    else:
        with open(os.path.join(out, "sigma_star.csv"), "w") as fh:
            d = pts.shape[1]
            fh.write(",".join(f"x{k}" for k in range(d)) + ",sigma,residual\n")
            for x, v, r in zip(pts, field.values, field.residuals):
                coords = ",".join(format_float(c) for c in x)
                fh.write(f"{coords},{format_float(v)},{format_float(r)}\n")


@main.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.argument("embedding", type=click.Path(exists=True))
@common_options
@click.option("--rho", type=float, default=None)
@click.option("--discrete-correction", is_flag=True,
              help="Use the finite-n estimator normalizers (drop 1/n "
                   "diagonal mass).")
@click.option("--header", is_flag=True)
@guarded
def functional(dataset, embedding, config, seed, out, threads, fmt, rho,
               discrete_correction, header):
    """Plug-in value of the limiting KL functional on an empirical joint."""
    opts = _resolved(config, rho=rho)
    opts.setdefault("rho", 0.3)
    opts["discrete_correction"] = discrete_correction
    opts["threads"] = resolve_threads(threads)
    opts["dataset"] = os.path.abspath(dataset)
    opts["embedding"] = os.path.abspath(embedding)
    write_manifest(out, "functional", opts)

    x = read_points_csv(dataset, header=header)
    y = read_points_csv(embedding, header=header)
    ctx = context_from_joint_points(x, y, opts["rho"])
    rep = functional_I(ctx, discrete_correction=discrete_correction)
    write_json(os.path.join(out, "functional.json"), {
        "value": rep.value,
        "p_mass": rep.p_mass,
        "q_mass": rep.q_mass,
        "discrete_correction": rep.discrete_correction,
        "quadrature": rep.meta,
    })


@main.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.argument("embedding", type=click.Path(exists=True))
@common_options
@click.option("--rho", type=float, default=None)
@click.option("--per-point", "per_point", type=click.Path(), default=None,
              help="Write per-point residual norms as CSV.")
@click.option("--header", is_flag=True)
@guarded
def stationarity(dataset, embedding, config, seed, out, threads, fmt, rho,
                 per_point, header):
    """Zero-force residuals (discrete and plugin conventions)."""
    opts = _resolved(config, rho=rho)
    opts.setdefault("rho", 0.3)
    opts["threads"] = resolve_threads(threads)
    opts["dataset"] = os.path.abspath(dataset)
    opts["embedding"] = os.path.abspath(embedding)
    write_manifest(out, "stationarity", opts)

    ds = validate_dataset(read_points_csv(dataset, header=header))
    emb = validate_embedding(read_points_csv(embedding, header=header), n=ds.n)
    p = calibrate_all(ds, opts["rho"])
    disc = residual_discrete(p, emb)
    ctx = context_from_joint_points(ds.points, emb.points, opts["rho"])
    plug = residual_plugin(ctx)
    write_json(os.path.join(out, "stationarity.json"), {
        "discrete": {"max_norm": disc.max_norm, "mean_norm": disc.mean_norm},
        "plugin": {"max_norm": plug.max_norm, "mean_norm": plug.mean_norm},
    })
    if per_point is not None:
        dn = np.linalg.norm(disc.per_point_residual, axis=1)
        pn = np.linalg.norm(plug.per_point_residual, axis=1)
        with open(per_point, "w") as fh:
            fh.write("discrete_norm,plugin_norm\n")
            for a, b in zip(dn, pn):
                fh.write(f"{format_float(a)},{format_float(b)}\n")


@main.command()
@common_options
@click.option("--resume", is_flag=True,
              help="Skip (cell, replica) pairs already in records.jsonl.")
@guarded
def sweep(config, seed, out, threads, fmt, resume):
    """Convergence sweep over an n grid; JSON-lines records plus summary."""
    opts = load_json_config(config)
    if seed is not None:
        opts["base_seed"] = seed
    opts.setdefault("base_seed", 0)
    opts.setdefault("family", "uniform_box")
    opts.setdefault("d", 1)
    opts.setdefault("rho", 0.3)
    opts.setdefault("s", 2)
    opts.setdefault("replicas", 1)
    opts.setdefault("restarts", 1)
    opts.setdefault("optimizer", {})
    n_grid = validate_n_grid(opts.get("n_grid", []))
    opts["n_grid"] = n_grid
    opts["threads"] = resolve_threads(threads)
    write_manifest(out, "sweep", opts)

    spec = DistributionSpec(family=opts["family"], d=opts["d"],
                            lo=opts.get("lo", -1.0), hi=opts.get("hi", 1.0),
                            mean=opts.get("mean", 0.0), sd=opts.get("sd", 1.0))
    run_cfg = RunConfig(rho=opts["rho"], s=opts["s"],
                        sigma_tol=opts.get("sigma_tol", 1e-10))

    records_path = os.path.join(out, "records.jsonl")
    done = set()
    records = []
    if resume and os.path.exists(records_path):
        with open(records_path) as fh:
            for line in fh:
                if line.strip():
                    doc = json.loads(line)
                    done.add((doc["cell"], doc["replica"]))
                    records.append(doc)

    ocfg = build_optimizer_config(opts["optimizer"], 0)
    with open(records_path, "a" if resume else "w") as fh:
        for cell, n in enumerate(n_grid):
            for replica in range(opts["replicas"]):
                if (cell, replica) in done:
                    continue
                rec = run_replica(spec, n, run_cfg, ocfg,
                                  restarts=opts["restarts"], cell=cell,
                                  replica=replica, base_seed=opts["base_seed"])
                doc = rec.to_dict()
                fh.write(json.dumps(doc, sort_keys=True) + "\n")
                fh.flush()
                records.append(doc)

    class _Rec:
        def __init__(self, doc):
            self.__dict__.update(doc)

    recs = [_Rec(doc) for doc in records]
    summary = summarize_records(recs, n_grid)
    write_json(os.path.join(out, "summary.json"), summary)

    curve_series = {}
    for name in ("sigma_gap", "F_gap", "loss_vs_functional", "stationarity_plugin"):
        curve_series[name] = [(n, summary["per_n"][n][name]) for n in n_grid]
    with open(os.path.join(out, "curves.svg"), "w") as fh:
        fh.write(curves_svg(curve_series))

    if all(doc["error"] is not None for doc in records):
        click.echo("error: every sweep cell failed", err=True)
        sys.exit(EXIT_ALL_FAILED)


@main.command()
@common_options
@click.option("--d", "dim", type=int, default=5)
@click.option("--n", "n_points", type=int, default=100)
@click.option("--t", "t_grid", type=float, multiple=True,
              default=(0.5, 1.0, 1.5, 2.0, 3.0))
@click.option("--replicas", type=int, default=2000)
@click.option("--bound-c", "c_const", type=float, default=2.0)
@click.option("--bound-c1", "c1_const", type=float, default=0.25)
@click.option("--delta", type=float, default=None)
@guarded
def tailcheck(config, seed, out, threads, fmt, dim, n_points, t_grid,
              replicas, c_const, c1_const, delta):
    """Monte Carlo check of the Gaussian max-norm tail bound."""
    opts = _resolved(config, seed=seed)
    opts.setdefault("seed", 0)
    opts.update({"d": dim, "n": n_points, "t_grid": list(t_grid),
                 "replicas": replicas, "C": c_const, "c1": c1_const,
                 "delta": delta, "threads": resolve_threads(threads)})
    write_manifest(out, "tailcheck", opts)

    table = tail_bound_check(d=dim, n=n_points, t_grid=list(t_grid),
                             replicas=replicas, C=c_const, c1=c1_const,
                             delta=delta, seed=opts["seed"])
    if fmt == "json":
        write_json(os.path.join(out, "tailcheck.json"), table)
    else:
        with open(os.path.join(out, "tailcheck.csv"), "w") as fh:
            fh.write("t,frequency,bound,std_err,flagged\n")
            for row in table["rows"]:
                fh.write(f"{format_float(row['t'])},"
                         f"{format_float(row['frequency'])},"
                         f"{format_float(row['bound'])},"
                         f"{format_float(row['std_err'])},"
                         f"{int(row['flagged'])}\n")
        write_json(os.path.join(out, "tailcheck.json"), table)


@main.command()
@common_options
@click.option("--n", "n_points", type=int, default=None,
              help="Sample size (desk preset: 2000).")
@click.option("--d", "dim", type=int, default=None,
              help="Input dimension (desk preset: 50).")
@click.option("--rho", type=float, default=None)
@click.option("--full", is_flag=True,
              help="Full-scale preset: n=100000, d=500 (long-running).")
@guarded
def figure1(config, seed, out, threads, fmt, n_points, dim, rho, full):
    """Scatter of a converged embedding of uniform noise on [-1,1]^d.

    Qualitative output: the input distribution, scale, and optimizer choices
    are all recorded in the manifest.
    """
    opts = _resolved(config, rho=rho, seed=seed)
    opts.setdefault("rho", 0.3)
    opts.setdefault("seed", 0)
    n = n_points if n_points is not None else (100_000 if full else 2000)
    d = dim if dim is not None else (500 if full else 50)
    opts.update({"n": n, "d": d, "full": full,
                 "threads": resolve_threads(threads)})
    opt_opts = dict(opts.get("optimizer", {}))
    opt_opts.setdefault("learning_rate", n / 1.2)
    opt_opts.setdefault("momentum_late", 0.95)
    opt_opts.setdefault("use_exaggeration", True)
    opts["optimizer"] = opt_opts
    write_manifest(out, "figure1", opts)

    rng = np.random.default_rng(opts["seed"])
    ds = validate_dataset(rng.uniform(-1.0, 1.0, size=(n, d)))
    p = calibrate_all(ds, opts["rho"])
    cfg = build_optimizer_config(opt_opts, opts["seed"])
    res = multistart_minimize(p, cfg, restarts=1, s=2)
    with open(os.path.join(out, "figure.svg"), "w") as fh:
        fh.write(scatter_svg(res.embedding.points))
    write_json(os.path.join(out, "result.json"), {
        "final_loss": res.final_loss, "iters_run": res.iters_run,
        "converged": res.converged, "final_grad_norm": res.final_grad_norm,
    })


if __name__ == "__main__":
    main()

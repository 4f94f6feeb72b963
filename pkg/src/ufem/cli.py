"""Command line entry point: ``ufem solve | study | fuzz``."""
from __future__ import annotations

import os

# BLAS threads must be fixed before numpy loads
if os.environ.get("UFEM_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["UFEM_THREADS"])

import json
import sys
from pathlib import Path

import click


def _fail(exc: Exception, code: int = 2):
    block = {"error": type(exc).__name__, "message": str(exc)}
    click.echo(json.dumps(block), err=True)
    sys.exit(code)


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Adaptive unfitted DG solver on merged quadtree meshes.

    Set UFEM_THREADS to bound the number of BLAS threads and study workers.
    """


@main.command()
@click.option("--problem", default=None, help="ex1_u1, ex1_u2, ex2_f1, ex2_f2, ex3, ex3_eps<e>, patch_test")
@click.option("--p", "p", type=int, default=None, help="polynomial degree")
@click.option("--tol", type=float, default=None, help="relative estimator reduction that stops the loop")
@click.option("--gamma", type=float, default=None, help="marking fraction")
@click.option("--eta0", type=float, default=None, help="interface deviation bound")
@click.option("--alpha0", type=float, default=None, help="penalty constant")
@click.option("--delta0", type=float, default=None, help="large-element threshold")
@click.option("--max-iter", type=int, default=None)
@click.option("--max-dofs", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="key = value file; command line options override it")
@click.option("--quiet", is_flag=True)
def solve(problem, p, tol, gamma, eta0, alpha0, delta0, max_iter, max_dofs, out, config, quiet):
    """Run the adaptive loop on a benchmark problem."""
    from .bench.run import ConfigError, RunConfig, load_config, parse_config, run

    over = dict(problem=problem, p=p, tol=tol, gamma=gamma, eta0=eta0, alpha0=alpha0, delta0=delta0,
                max_iter=max_iter, max_dofs=max_dofs, out=out)
    try:
        cfg = load_config(config, **over) if config else parse_config("", **over)
    except ConfigError as exc:
        _fail(exc)

    def log(r):
        if not quiet:
            err = "" if r.dg_error is None else f"  error {r.dg_error:.4e}  eff {r.effectivity:.2f}"
            click.echo(f"iter {r.iteration:3d}  dofs {r.dofs:7d}  estimator {r.estimator:.4e}{err}")

    try:
        summary = run(cfg, log)
    except Exception as exc:           # noqa: BLE001 - reported as a machine-readable block
        _fail(exc, 1)
    click.echo(json.dumps({k: v for k, v in summary.items() if k != "config"}, indent=2))


@main.command()
@click.option("--eps", default="1e-2,1e-3,1e-4", help="comma separated rounding parameters")
@click.option("--p", "p", type=int, default=4)
@click.option("--tol", type=float, default=1e-4)
@click.option("--max-dofs", type=int, default=None)
@click.option("--workers", type=int, default=None, help="parallel processes (default UFEM_THREADS or 1)")
@click.option("--out", type=click.Path(file_okay=False), default="study")
def study(eps, p, tol, max_dofs, workers, out):
    """Sharp versus rounded corner study on the rhombus domain."""
    from .bench.study import modeling_error_study

    try:
        eps_list = [float(e) for e in eps.split(",") if e.strip()]
    except ValueError as exc:
        _fail(exc)
    workers = workers or int(os.environ.get("UFEM_THREADS", "1"))
    try:
        rep = modeling_error_study(eps_list, p=p, tol=tol, max_dofs=max_dofs, workers=workers, log=click.echo)
    except Exception as exc:           # noqa: BLE001
        _fail(exc, 1)
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / "study.csv").write_text(rep.to_csv(), encoding="utf-8")
    (d / "summary.json").write_text(json.dumps(rep.summary(), indent=2) + "\n", encoding="utf-8")
    click.echo(rep.to_text())
    if any(r.error for r in rep.rows):
        sys.exit(1)


@main.command()
@click.option("--trials", type=int, default=100)
@click.option("--seed", type=int, default=0)
def fuzz(trials, seed):
    """Random geometries through the merging pipeline."""
    from .bench.fuzz import fuzz_merging

    if trials < 1:
        _fail(ValueError("trials must be at least 1"))
    rep = fuzz_merging(seed, trials)
    click.echo(rep.summary())
    for k, bad in rep.failures:
        click.echo(f"  trial {k} (seed {seed}): {bad}")
    sys.exit(0 if rep.passed == rep.trials else 1)


if __name__ == "__main__":
    main()

"""Command-line experiment runner."""
from __future__ import annotations

import csv
import io
import json
import sys
from pathlib import Path

import click

from . import __version__
from .experiments import CRITERIA, EXPERIMENTS, ExperimentSpec, run

SCHEMA_VERSION = 1
KEYS = ("experiment", "q-grid", "delta0", "nmax", "witness", "evaluator", "n-vec", "out", "seed", "tol", "jobs")


def read_config(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(f"{path}:{lineno}: expected key = value")
        k, v = (t.strip() for t in line.split("=", 1))
        k = k.replace("_", "-")
        if k not in KEYS:
            raise click.UsageError(f"{path}:{lineno}: unknown key {k!r}")
        out[k] = v
    return out


def _grid(text, cast=float):
    vals = tuple(cast(t) for t in str(text).replace(",", " ").split())
    if not vals:
        raise click.UsageError("grid must be nonempty")
    return tuple(int(v) if isinstance(v, float) and v.is_integer() else v for v in vals)


def _num_or_rule(text):
    try:
        return float(text)
    except ValueError:
        return text


def _nmax_rule(text):
    t = str(text).strip()
    if t == "auto" or t.endswith("Q"):
        try:
            float(t[:-1] or 1) if t.endswith("Q") else None
        except ValueError:
            raise click.UsageError(f"bad n_max rule {t!r}")
        return t
    try:
        return int(t)
    except ValueError:
        raise click.UsageError(f"bad n_max rule {t!r}; use an integer, 'auto' or '<k>Q'")


def build_spec(opts: dict) -> ExperimentSpec:
    if "experiment" not in opts:
        raise click.UsageError("--experiment is required")
    spec = ExperimentSpec(
        experiment=opts["experiment"],
        q_grid=_grid(opts["q-grid"]) if "q-grid" in opts else None,
        delta0=_num_or_rule(opts["delta0"]) if "delta0" in opts else None,
        nmax=_nmax_rule(opts["nmax"]) if "nmax" in opts else None,
        witness=opts.get("witness", "a0"),
        evaluator=opts.get("evaluator"),
        n_vec=_grid(opts["n-vec"], int) if "n-vec" in opts else None,
        seed=int(opts.get("seed", 0)),
        tol=float(opts["tol"]) if "tol" in opts else None,
        jobs=int(opts.get("jobs", 1)),
    )
    if spec.witness not in ("a0", "a0+b0"):
        raise click.UsageError(f"witness must be a0 or a0+b0, got {spec.witness!r}")
    try:
        spec = spec.resolved()
        for Q in spec.q_grid or ():
            spec.nmax_for(Q)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    return spec


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def rows_to_csv(rows, header: str) -> str:
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in cols])
    return buf.getvalue()


def write_outputs(result, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    name = result.spec.experiment
    head = f"a2lab results schema={SCHEMA_VERSION} version={__version__} experiment={name} seed={result.spec.seed}"
    (out / "results.csv").write_text(rows_to_csv(result.rows, head))
    (out / "plotdata.csv").write_text(rows_to_csv(result.plot, head.replace("results", "plotdata")))
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")


@click.command(context_settings=dict(help_option_names=["-h", "--help"]))
@click.option("--config", type=click.Path(exists=True, dir_okay=False), help="key = value file; flags override it")
@click.option("-e", "--experiment", type=click.Choice(sorted(EXPERIMENTS)))
@click.option("--criterion", type=click.IntRange(1, 10), help="run the experiment for an acceptance criterion")
@click.option("--q-grid", help="comma or space separated Q values")
@click.option("--delta0", help="number or 'auto'")
@click.option("--nmax", help="integer, 'auto' or '<k>Q' (e.g. 16Q)")
@click.option("--witness", type=click.Choice(["a0", "a0+b0"]))
@click.option("--evaluator", help="fast | brute (pi-exponent), fast | materialized (hdy-witness)")
@click.option("--n-vec", help="quasi-periodization frequencies")
@click.option("--out", type=click.Path(file_okay=False), help="output directory")
@click.option("--seed", type=int)
@click.option("--tol", type=float)
@click.option("--jobs", type=int, help="worker threads over grid points")
@click.option("--list", "list_", is_flag=True, help="list experiments and exit")
@click.version_option(__version__)
def main(config, criterion, list_, **flags):
    """Run one named experiment and write results.csv, summary.json and plotdata.csv."""
    if list_:
        for k, e in sorted(EXPERIMENTS.items()):
            crit = [str(c) for c, n in CRITERIA.items() if n == k]
            click.echo(f"{k:24s} {e.description}" + (f"  [criterion {crit[0]}]" if crit else ""))
        return
    opts = read_config(config) if config else {}
    if criterion is not None:
        opts["experiment"] = CRITERIA[criterion]
    for k, v in flags.items():
        if v is not None:
            opts[k.replace("_", "-")] = str(v)
    spec = build_spec(opts)
    try:
        result = run(spec)
    except (ArithmeticError, ValueError) as exc:
        raise click.ClickException(f"{spec.experiment} failed: {type(exc).__name__}: {exc}") from exc
    out = Path(opts.get("out", f"runs/{spec.experiment}"))
    write_outputs(result, out)
    for name, ok in result.checks.items():
        click.echo(f"{'PASS' if ok else 'FAIL'}  {name}")
    if result.fit and "slope" in result.fit:
        f = result.fit
        click.echo(f"slope {f['slope']:.4f}  95% CI [{f['ci_low']:.4f}, {f['ci_high']:.4f}]")
    errors = sum(1 for r in result.rows if r.get("error"))
    if errors:
        click.echo(f"{errors} grid point(s) failed; see results.csv", err=True)
    click.echo(f"wrote {out}/results.csv, summary.json, plotdata.csv  ({result.runtime_s:.2f} s)")
    sys.exit(0 if result.passed else 1)


if __name__ == "__main__":
    main()

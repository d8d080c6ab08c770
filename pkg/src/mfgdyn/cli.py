"""Command-line front end.

Commands: validate | trajectory | equilibria | stability | examples.
Exit codes: 0 success, 1 validation failure, 2 integration failure,
3 solver failure, 4 stability check failed uniqueness, 5 stability check
inconclusive, 64 usage error.
"""

from __future__ import annotations

import json
import sys

import click
import numpy as np

from . import tolerances as tol
from .dynamics import integrate
from .equilibrium import (NoRootError, find_deterministic_equilibria,
                          find_mixed_equilibria_two_strategy)
from .examples import BUILTIN_EXAMPLES, build_example
from .mdp import SolverError
from .model import (ModelError, check_distribution, grid_starts, load_model,
                    save_model, validate_model, with_params)
from .stability import (NotConstantError, NotIrreducibleError,
                        SurfaceNotFoundError, explicit_delta, global_check,
                        local_check)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INTEGRATION = 2
EXIT_SOLVER = 3
EXIT_FAILS_UNIQUENESS = 4
EXIT_INCONCLUSIVE = 5
EXIT_USAGE = 64


def _parse_overrides(pairs):
    out = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep:
            raise click.UsageError(f"--set needs KEY=VALUE, got {item!r}")
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise click.UsageError(f"--set {key.strip()}: {value!r} is not a number")
    return out


def _load_model(model_path, example, set_):
    if (model_path is None) == (example is None):
        raise click.UsageError("exactly one of --model PATH or --example NAME is required")
    overrides = _parse_overrides(set_)
    if model_path is not None:
        model = load_model(model_path)
        return with_params(model, overrides) if overrides else model
    try:
        return build_example(example, overrides)
    except ValueError as exc:
        raise click.UsageError(str(exc))


def _emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        click.echo(text)


def _dump(payload):
    return json.dumps(payload, indent=2, sort_keys=True)


def model_options(fn):
    fn = click.option("--set", "set_", multiple=True, metavar="KEY=VALUE",
                      help="Override a model parameter (repeatable).")(fn)
    fn = click.option("--example", type=click.Choice(BUILTIN_EXAMPLES),
                      help="Use a built-in example model.")(fn)
    fn = click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
                      help="Model file (.json or .toml).")(fn)
    return fn


@click.group()
def cli():
    """Finite-state mean field games: population dynamics, equilibria,
    convergence checks."""


@cli.command()
@model_options
@click.option("--samples", default=1000, show_default=True,
              help="Quasi-random simplex points to test (plus all vertices).")
@click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="text",
              show_default=True)
@click.option("--out", type=click.Path(), help="Write the report to a file.")
@click.pass_context
def validate(ctx, model_path, example, set_, samples, fmt, out):
    """Check the conservative-generator invariants by sampling."""
    model = _load_model(model_path, example, set_)
    report = validate_model(model, samples)
    if fmt == "json":
        text = _dump(report.to_dict(model))
    else:
        lines = [f"checked {report.n_points} simplex points: "
                 + ("ok" if report.ok else f"{len(report.violations)} violation(s)")]
        for v in report.violations:
            lines.append(f"  {v.kind}: action {model.actions[v.action]} "
                         f"state {v.i}->{v.j} value {v.value!r} at m={v.m} {v.message}")
        text = "\n".join(lines)
    _emit(text, out)
    ctx.exit(EXIT_OK if report.ok else EXIT_VALIDATION)


@cli.command()
@model_options
@click.option("--m0", "m0s", multiple=True, metavar="P1,P2,...",
              help="Initial distribution (repeatable).")
@click.option("--grid", type=int, help="Number of evenly spaced starts.")
@click.option("--horizon", default=100.0, show_default=True)
@click.option("--tol-opt", default=tol.OPT, show_default=True,
              help="Best-response tie tolerance.")
@click.option("--sample-at", multiple=True, type=float,
              help="Time the integrator must land on exactly (repeatable).")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default="trajectory", show_default=True,
              help="Output prefix for CSV files and the summary JSON.")
@click.pass_context
def trajectory(ctx, model_path, example, set_, m0s, grid, horizon, tol_opt,
               sample_at, seed, out):
    """Integrate the adjustment dynamics; one CSV per start plus a summary."""
    model = _load_model(model_path, example, set_)
    if not m0s and grid is None:
        raise click.UsageError("need --m0 or --grid")
    starts = [check_distribution([float(x) for x in s.split(",")], model.state_count)
              for s in m0s]
    if grid is not None:
        if grid <= 0:
            raise click.UsageError("--grid must be positive")
        starts.extend(grid_starts(model.state_count, grid))

    equilibria = find_deterministic_equilibria(model, tau_opt=tol_opt)
    equilibria = [e for e in equilibria if e.is_equilibrium]
    summary = []
    failures = 0
    for k, m0 in enumerate(starts):
        traj = integrate(model, m0, horizon=horizon, tau_opt=tol_opt,
                         sample_times=sample_at)
        path = f"{out}_{k:03d}.csv"
        traj.write_csv(path, model)
        ok = traj.termination in ("horizon", "converged")
        failures += 0 if ok else 1
        nearest = None
        for idx, eq in enumerate(equilibria):
            dist = float(np.abs(traj.terminal_state - eq.m).max())
            if dist <= 1e-3 and (nearest is None or dist < nearest["distance"]):
                nearest = {"index": idx, "distance": dist}
        summary.append({
            "start": [float(x) for x in m0],
            "file": path,
            "termination": traj.termination,
            "message": traj.message,
            "terminal": [float(x) for x in traj.terminal_state],
            "terminal_mode": traj.terminal_mode,
            "nearest_equilibrium": nearest,
        })
    payload = {
        "horizon": horizon,
        "seed": seed,
        "equilibria": [e.to_dict(model) for e in equilibria],
        "runs": summary,
    }
    summary_path = f"{out}_summary.json"
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dump(payload) + "\n")
    click.echo(f"wrote {len(starts)} trajectory file(s) and {summary_path}")
    ctx.exit(EXIT_INTEGRATION if failures else EXIT_OK)


@cli.command()
@model_options
@click.option("--mixed", nargs=2, metavar="D1 D2",
              help="Also search mixed equilibria between two strategies "
                   "(comma-separated action labels per state).")
@click.option("--tol-opt", default=tol.OPT, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="json",
              show_default=True)
@click.option("--out", type=click.Path())
@click.pass_context
def equilibria(ctx, model_path, example, set_, mixed, tol_opt, fmt, out):
    """Enumerate stationary equilibria (deterministic, optionally mixed)."""
    model = _load_model(model_path, example, set_)
    try:
        reports = find_deterministic_equilibria(model, tau_opt=tol_opt)
        if mixed:
            d1 = model.strategy_from_labels(mixed[0])
            d2 = model.strategy_from_labels(mixed[1])
            reports.extend(find_mixed_equilibria_two_strategy(
                model, d1, d2, tau_opt=tol_opt))
    except (SolverError, NoRootError, np.linalg.LinAlgError) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        ctx.exit(EXIT_SOLVER)
    payload = [r.to_dict(model) for r in reports]
    if fmt == "json":
        text = _dump(payload)
    else:
        lines = [f"{len(payload)} report(s)"]
        for r in payload:
            tag = "equilibrium" if r["is_equilibrium"] else "near-miss"
            strat = r.get("strategy") or "mixed"
            lines.append(f"  {tag}: {strat} at m={r['m']} residual {r['residual']:.2e}")
        text = "\n".join(lines)
    _emit(text, out)
    ctx.exit(EXIT_OK)


@cli.command()
@model_options
@click.option("--global", "global_pair", nargs=2, metavar="D1 D2",
              help="Run the two-strategy surface check for this pair.")
@click.option("--surface-samples", default=200, show_default=True)
@click.option("--eps-max", default=0.2, show_default=True)
@click.option("--tol-opt", default=tol.OPT, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="json",
              show_default=True)
@click.option("--out", type=click.Path())
@click.pass_context
def stability(ctx, model_path, example, set_, global_pair, surface_samples,
              eps_max, tol_opt, seed, fmt, out):
    """Local convergence checks per equilibrium, or the global two-strategy
    surface classification with --global."""
    model = _load_model(model_path, example, set_)
    payload = {}
    exit_code = EXIT_OK
    if global_pair:
        d1 = model.strategy_from_labels(global_pair[0])
        d2 = model.strategy_from_labels(global_pair[1])
        try:
            report = global_check(model, d1, d2, surface_samples, seed=seed)
        except SurfaceNotFoundError as exc:
            click.echo(f"solver failure: {exc}", err=True)
            ctx.exit(EXIT_SOLVER)
        payload["global"] = report.to_dict()
        if report.case == "mixed/none":
            exit_code = EXIT_INCONCLUSIVE
    else:
        try:
            eqs = [e for e in find_deterministic_equilibria(model, tau_opt=tol_opt)
                   if e.is_equilibrium]
        except (SolverError, NoRootError) as exc:
            click.echo(f"solver failure: {exc}", err=True)
            ctx.exit(EXIT_SOLVER)
        checks = []
        for eq in eqs:
            rep = local_check(model, eq, eps_max=eps_max, seed=seed, tau_opt=tol_opt)
            if rep.classification == "locally-convergent":
                try:
                    rep.delta = explicit_delta(model, eq, rep.eps_radius)
                except (NotConstantError, NotIrreducibleError):
                    rep.delta = None
            checks.append(rep.to_dict(model))
        payload["local"] = checks
        if any(c["classification"] == "fails-uniqueness" for c in checks):
            exit_code = EXIT_FAILS_UNIQUENESS
        elif any(c["classification"] == "inconclusive" for c in checks):
            exit_code = EXIT_INCONCLUSIVE
    if fmt == "json":
        text = _dump(payload)
    else:
        lines = []
        for c in payload.get("local", ()):
            lines.append(f"{c['equilibrium'].get('strategy')}: {c['classification']} "
                         f"(eps_radius {c['eps_radius']:.4g}, delta {c['delta']})")
        if "global" in payload:
            g = payload["global"]
            lines.append(f"global case ({g['case']}) from {g['n_samples']} surface samples; "
                         f"{len(g['violations'])} violation(s)")
        text = "\n".join(lines) if lines else "nothing to check"
    _emit(text, out)
    ctx.exit(exit_code)


@cli.group(name="examples")
def examples_group():
    """Built-in example models."""


@examples_group.command(name="list")
def examples_list():
    """List available example names."""
    for name in BUILTIN_EXAMPLES:
        click.echo(name)


@examples_group.command(name="export")
@click.argument("name", type=click.Choice(BUILTIN_EXAMPLES))
@click.argument("file", type=click.Path())
@click.option("--set", "set_", multiple=True, metavar="KEY=VALUE")
def examples_export(name, file, set_):
    """Write a built-in example as a model file (.json or .toml)."""
    try:
        model = build_example(name, _parse_overrides(set_))
    except ValueError as exc:
        raise click.UsageError(str(exc))
    save_model(model, file)
    click.echo(f"wrote {file}")


def run(argv=None):
    """Execute the CLI, returning the process exit code."""
    try:
        # non-standalone mode returns the ctx.exit code instead of raising
        result = cli.main(args=argv, standalone_mode=False)
        if isinstance(result, int):
            return result
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except ModelError as exc:
        click.echo(f"model error: {exc}", err=True)
        return EXIT_VALIDATION
    except (SolverError, NoRootError) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        return EXIT_SOLVER
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

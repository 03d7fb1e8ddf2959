"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 infeasible, 3 divergence,
4 numerical failure.
"""

from __future__ import annotations

import json
import math
import sys

import click
import numpy as np

from .constant_delay import figure1_sweep, rightmost_root, write_sweep_csv
from .ddesim import (
    fit_decay,
    make_compatible_history,
    simulate_closed_loop,
    write_trace_csv,
)
from .errors import DelayRobustError, DivergenceError, NumericalError
from .linalg import certify_envelope
from .margin import (
    PlantModel,
    closed_loop_margin,
    comparison_system,
    sigma_condition,
    small_gain_sides,
)
from .signals import parse_signal

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_DIVERGED, EXIT_NUMERICAL = 0, 1, 2, 3, 4


def _fail(message, code):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def load_model(path) -> PlantModel:
    """Read ``{"A": .., "B": .., "K": .., "r": ..}`` into a validated model."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        _fail(f"cannot read model file: {exc}", EXIT_INPUT)
    except json.JSONDecodeError as exc:
        _fail(f"model file is not valid JSON: {exc}", EXIT_INPUT)
    missing = [key for key in ("A", "B", "K", "r") if key not in doc]
    if missing:
        _fail(f"model file lacks field(s): {', '.join(missing)}", EXIT_INPUT)
    try:
        return PlantModel(A=doc["A"], B=doc["B"], k=doc["K"], r=doc["r"])
    except (DelayRobustError, TypeError, ValueError) as exc:
        _fail(f"invalid model: {exc}", EXIT_INPUT)


def _num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _emit(data: dict, as_json: bool):
    if as_json:
        click.echo(json.dumps({k: _num(v) for k, v in data.items()}, indent=2))
    else:
        for key, value in data.items():
            click.echo(f"{key}: {value}")


@click.group()
def main():
    """Delay-robustness margins, simulations and constant-delay windows for
    linear predictor feedback."""


@main.command()
@click.argument("model_path", type=click.Path())
@click.option("--eps", type=float, default=None, help="Perturbation magnitude to check.")
@click.option("--find-max", is_flag=True, help="Report the largest certified perturbation.")
@click.option("--mu", type=float, default=None, help="Fix the Lyapunov decay rate of the envelope.")
@click.option("--json", "as_json", is_flag=True)
def margin(model_path, eps, find_max, mu, as_json):
    """Evaluate the small-gain margin of a model file."""
    model = load_model(model_path)
    if eps is not None and find_max:
        _fail("--eps and --find-max are mutually exclusive", EXIT_INPUT)
    try:
        report = closed_loop_margin(model, 0.0 if eps is None else eps, mu=mu)
    except NumericalError as exc:
        _fail(str(exc), EXIT_NUMERICAL)
    except DelayRobustError as exc:
        _fail(str(exc), EXIT_INPUT)
    if eps is None:
        _emit({"epsilon_max": report.epsilon_max, "capped": report.capped,
               "theta": report.theta, "lambda": report.lam,
               "scalar_path": report.scalar_path}, as_json)
        sys.exit(EXIT_OK)
    _emit({"epsilon": report.epsilon, "lhs": report.lhs, "rhs": report.rhs,
           "feasible": report.feasible, "sigma": report.sigma, "delta": report.delta,
           "theta": report.theta, "lambda": report.lam,
           "epsilon_max": report.epsilon_max, "scalar_path": report.scalar_path}, as_json)
    sys.exit(EXIT_OK if report.feasible else EXIT_INFEASIBLE)


def _parse_vector(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        _fail(f"cannot parse vector {text!r}", EXIT_INPUT)


@main.command()
@click.argument("model_path", type=click.Path())
@click.option("--eps", type=float, default=0.0, show_default=True)
@click.option("--signal", "signal_spec", default="const:0", show_default=True,
              help="const:c | pwc:seed:dwell | sin:freq[:phase]")
@click.option("--x0", default="1", show_default=True, help="Comma-separated initial state.")
@click.option("--u0", default="0", show_default=True,
              help="Constant seed for the control history (comma-separated).")
@click.option("--tfinal", type=float, default=20.0, show_default=True)
@click.option("--dt", type=float, default=0.01, show_default=True)
@click.option("--burn-in", type=float, default=None, help="Start of the decay fit (default r + eps).")
@click.option("--out", type=click.Path(), default="trace.csv", show_default=True)
@click.option("--summary", type=click.Path(), default=None, help="Write the summary JSON here.")
def simulate(model_path, eps, signal_spec, x0, u0, tfinal, dt, burn_in, out, summary):
    """Simulate the closed loop and fit its decay rate."""
    model = load_model(model_path)
    try:
        signal = parse_signal(signal_spec, eps)
        history = make_compatible_history(model, eps, _parse_vector(x0), _parse_vector(u0), dt)
    except DelayRobustError as exc:
        _fail(str(exc), EXIT_INPUT)
    code = EXIT_OK
    try:
        trace = simulate_closed_loop(model, signal, history, tfinal, dt)
    except DivergenceError as exc:
        trace, code = exc.trace, EXIT_DIVERGED
    except DelayRobustError as exc:
        _fail(str(exc), EXIT_INPUT)
    write_trace_csv(trace, out)
    burn = model.r + eps if burn_in is None else burn_in
    info = {"epsilon": eps, "signal": signal.spec(), "dt": dt, "t_final": float(trace.times[-1]),
            "steps": len(trace.times) - 1, "diverged": trace.diverged, "trace": str(out)}
    if not trace.diverged:
        fit = fit_decay(trace, burn)
        info.update(sigma_hat=_num(fit.sigma_hat), Q_hat=_num(fit.Q_hat),
                    estimate_holds=fit.estimate_holds, exact_zero=fit.exact_zero)
    text = json.dumps(info, indent=2)
    if summary:
        with open(summary, "w") as fh:
            fh.write(text + "\n")
    click.echo(text)
    if code:
        click.echo("error: simulation diverged; partial trace written", err=True)
    sys.exit(code)


@main.command()
@click.option("--pmin", type=float, default=1.5, show_default=True)
@click.option("--pmax", type=float, default=5.0, show_default=True)
@click.option("--steps", type=int, default=8, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="CSV path (default stdout).")
def figure1(pmin, pmax, steps, jobs, out):
    """Tabulate the certified and constant-delay windows over a gain range."""
    if not (1.0 < pmin <= pmax) or steps < 1 or (steps == 1 and pmin != pmax):
        _fail("need 1 < pmin <= pmax and steps >= 1 (steps = 1 only when pmin = pmax)",
              EXIT_INPUT)
    grid = np.linspace(pmin, pmax, steps) if steps > 1 else [pmin]
    try:
        rows = figure1_sweep(grid, jobs=jobs)
    except NumericalError as exc:
        _fail(str(exc), EXIT_NUMERICAL)
    if out:
        write_sweep_csv(rows, out)
    else:
        click.echo("p,red_tau_min,red_tau_max,blue_tau_min,blue_tau_max")
        for row in rows:
            click.echo(",".join(f"{v:.17g}" for v in row))


@main.command()
@click.argument("model_path", type=click.Path())
@click.option("--eps", type=float, required=True)
@click.option("--mu", type=float, default=None)
@click.option("--json", "as_json", is_flag=True)
def certify(model_path, eps, mu, as_json):
    """Emit a decay-rate certificate, re-verifying every inequality first."""
    model = load_model(model_path)
    try:
        sys_ = comparison_system(model, mu=mu)
        report = closed_loop_margin(model, eps, mu=mu)
    except NumericalError as exc:
        _fail(str(exc), EXIT_NUMERICAL)
    except DelayRobustError as exc:
        _fail(str(exc), EXIT_INPUT)
    if not report.feasible or not math.isfinite(report.delta):
        click.echo(f"infeasible at epsilon={eps}: lhs={report.lhs!r} rhs={report.rhs!r}", err=True)
        sys.exit(EXIT_INFEASIBLE)
    lhs, rhs = small_gain_sides(sys_, eps, report.scalar_path)
    delta = sigma_condition(sys_, eps, report.sigma, report.scalar_path)
    checks = {
        "small-gain inequality": lhs < rhs,
        "contraction gain below one": delta < 1.0,
        "sigma inside (0, lambda)": 0.0 <= report.sigma < report.lam,
        "decay envelope": report.scalar_path or certify_envelope(sys_.Ahat, sys_.envelope),
    }
    failed = [name for name, ok in checks.items() if not ok]
    if failed:
        _fail(f"certificate re-verification failed: {', '.join(failed)}", EXIT_NUMERICAL)
    cert = {"epsilon": report.epsilon, "theta": report.theta, "lambda": report.lam,
            "sigma": report.sigma, "delta": delta, "scalar_path": report.scalar_path,
            "feasible": True}
    _emit(cert, as_json)


@main.command("analyze-constant")
@click.argument("model_path", type=click.Path(), required=False)
@click.option("--gain", type=float, default=None, help="Gain p of the unstable scalar plant.")
@click.option("--tau", type=float, required=True, help="Constant actual delay.")
@click.option("--N", "n_nodes", type=int, default=48, show_default=True)
@click.option("--form", type=click.Choice(["reduced_x", "reduced_p"]), default="reduced_x")
@click.option("--json", "as_json", is_flag=True)
def analyze_constant(model_path, gain, tau, n_nodes, form, as_json):
    """Rightmost characteristic root under a constant delay mismatch."""
    if (model_path is None) == (gain is None):
        _fail("give exactly one of MODEL_PATH or --gain", EXIT_INPUT)
    if model_path is not None:
        target = load_model(model_path)
    else:
        if not gain > 1.0:
            _fail("--gain must exceed 1", EXIT_INPUT)
        target = gain
    try:
        est = rightmost_root(target, tau, N=n_nodes, form=form)
    except NumericalError as exc:
        _fail(f"collocation failed: {exc}", EXIT_NUMERICAL)
    except DelayRobustError as exc:
        _fail(str(exc), EXIT_INPUT)
    _emit({"tau": tau, "root_real": est.root.real, "root_imag": est.root.imag,
           "residual": est.residual, "refined": est.refined,
           "verdict": "stable" if est.root.real < 0.0 else "unstable"}, as_json)


@main.command("example-model")
@click.option("--gain", type=float, default=2.0, show_default=True)
@click.option("--r", "delay", type=float, default=1.0, show_default=True)
def example_model(gain, delay):
    """Print the model file of the unstable scalar plant x' = x + u(t - r)."""
    click.echo(json.dumps({"A": [[1.0]], "B": [[1.0]], "K": [[-gain]], "r": delay}))


if __name__ == "__main__":
    main()

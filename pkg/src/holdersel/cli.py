"""Command-line entry point.

Subcommands
-----------
``run CONFIG``
    Validate the model and run the configured experiment, appending one
    summary row per rung to the summary CSV.
``analyze NAME``
    Evaluate a closed form (``p-select``, ``psi-bar``, ``pi-mass``,
    ``scale``, ``exit-bound``, ``gamma-asym``) from parameter flags.
``demo``
    Symmetric square-root example: selection split and extremal solutions.
``validate CONFIG``
    Report the assumption checks of the configured model.

Exit status is 0 on success, 2 for invalid input or failed validation and
3 for numerical failures. Diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import analysis as an
from ._version import __version__
from .coeffs import GridSpec, SmallNoiseModel, TwoScaleModel, validate_model
from .config import ExperimentConfig, load_config, require
from .csvio import write_path_csv, write_summary
from .errors import ConfigError, DomainError, HolderselError, exit_status
from .seeding import worker_count

__all__ = ["main", "build_parser", "run_experiment"]


# ---------------------------------------------------------------------------
# run


def _policy(exp):
    from .sim import StepPolicy

    pol = exp.get("policy")
    if pol is None:
        return None
    if not isinstance(pol, dict) or "base_dt" not in pol:
        raise ConfigError("experiment.policy must be a table with base_dt")
    return StepPolicy(float(pol["base_dt"]), pol.get("kind", "two-level"),
                      float(pol.get("floor", 1e-4)))


def _need(model, cls, harness):
    if not isinstance(model, cls):
        kind = "small-noise" if cls is SmallNoiseModel else "two-scale"
        raise ConfigError(f"harness {harness!r} needs a {kind} model")


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> list[dict]:
    """Run the configured harness and return its summary rows.

    Raises
    ------
    ConfigError
        On missing or invalid experiment parameters.
    """
    from . import experiments as ex

    exp, m, h = cfg.experiment, cfg.model, cfg.harness
    seed0 = cfg.seed0
    n = require(exp, "n_paths", int)
    kw = {"workers": worker_count(workers)}
    if "chunk" in exp:
        kw["chunk"] = int(exp["chunk"])
    if h in ("selection", "pathwise", "attraction", "moment", "exit-time", "ergodicity"):
        _need(m, SmallNoiseModel, h)
    if h == "selection":
        res = ex.run_selection(m, require(exp, "eps"), require(exp, "delta"), n, seed0,
                               policy=_policy(exp), **kw)
    elif h == "pathwise":
        res = ex.run_pathwise_selection(m, require(exp, "eps"), require(exp, "delta"), n,
                                        require(exp, "T"), seed0, policy=_policy(exp),
                                        h=float(exp.get("h", 1e-3)),
                                        y0=float(exp.get("y0", 0.0)), **kw)
    elif h == "attraction":
        res = ex.run_attraction(m, require(exp, "eps", list), require(exp, "T"), n, seed0,
                                policy=_policy(exp), h=float(exp.get("h", 1e-3)),
                                n_checkpoints=int(exp.get("n_checkpoints", 100)), **kw)
    elif h == "moment":
        res = ex.run_moment_bound(m, require(exp, "eps", list), require(exp, "T"), n, seed0,
                                  policy=_policy(exp),
                                  n_checkpoints=int(exp.get("n_checkpoints", 100)), **kw)
    elif h == "exit-time":
        res = ex.run_exit_time_scaling(m, require(exp, "eps"), require(exp, "delta", list), n,
                                       seed0, policy=_policy(exp), **kw)
    elif h == "ergodicity":
        y0 = require(exp, "y0_pair", list)
        if len(y0) != 2:
            raise ConfigError("experiment.y0_pair must have two entries")
        burn = exp.get("burn_in")
        res = ex.run_frozen_ergodicity(exp.get("x", list(m.x0)), m, require(exp, "T", list), n,
                                       tuple(y0), seed0, dt=float(exp.get("dt", 0.01)),
                                       bins=int(exp.get("bins", 64)),
                                       burn_in=None if burn is None else float(burn), **kw)
    elif h == "residual":
        from .generator import test_function_registry

        _need(m, TwoScaleModel, h)
        T = require(exp, "T")
        funcs = test_function_registry(m.d, int(exp.get("degree", 3)),
                                       float(exp.get("radius", 2.0)), center=list(m.x0))
        res = ex.run_martingale_residual(
            m, require(exp, "eps", list), T, n, funcs, seed0,
            s=float(exp.get("s", T / 2)), s1=float(exp.get("s1", T / 4)),
            dt_factor=float(exp.get("dt_factor", 0.01)),
            history_width=float(exp.get("history_width", 0.3)),
            n_boot=int(exp.get("n_boot", 200)), control=bool(exp.get("control", True)), **kw)
    else:  # pragma: no cover - parse_config rejects unknown names
        raise ConfigError(f"unknown harness {h!r}")
    return res.rows()


def _grid(cfg: ExperimentConfig) -> GridSpec:
    g = cfg.tolerances.get("grid", {})
    if not isinstance(g, dict):
        raise ConfigError("tolerances.grid must be a table")
    try:
        return GridSpec(**g)
    except TypeError as exc:
        raise ConfigError(f"invalid tolerances.grid: {exc}") from exc


def _dump_paths(cfg: ExperimentConfig, out_dir: Path) -> int:
    """Re-simulate the first paths of the run with recording on."""
    from .sim import StepPolicy, simulate_small_noise, simulate_two_scale

    count = cfg.output.get("dump_paths", 0)
    count = 1 if count is True else int(count)
    if count <= 0:
        return 0
    exp, m = cfg.experiment, cfg.model
    eps = exp.get("eps")
    eps = float(eps[0] if isinstance(eps, list) else eps)
    T = exp.get("T", 1.0)
    T = float(T[-1] if isinstance(T, list) else T)
    pol = _policy(exp) or StepPolicy(1e-3)
    for i in range(count):
        seed = cfg.seed0 + i
        if isinstance(m, TwoScaleModel):
            p = simulate_two_scale(m, eps, T, pol, seed)
        else:
            p = simulate_small_noise(m, eps, T, pol, seed)
        write_path_csv(out_dir / f"path_{seed}.csv", p.times, p.xs, p.ys)
    return count


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    report = validate_model(cfg.model, _grid(cfg))
    if not report.passed:
        print(report.format(), file=sys.stderr)
        print("error: model fails its assumption checks", file=sys.stderr)
        return 2
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rows = run_experiment(cfg, args.workers)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = cfg.output.get("summary_csv") or f"{Path(args.config).stem}.summary.csv"
    path = write_summary(out, rows, config_hash=cfg.hash, seed0=cfg.seed0)
    n = _dump_paths(cfg, Path(cfg.output.get("paths_dir", "paths")))
    print(f"wrote {len(rows)} row(s) to {path}" + (f"; {n} path file(s)" if n else ""))
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.config, args.set)
    report = validate_model(cfg.model, _grid(cfg))
    print(report.format())
    return 0 if report.passed else 2


# ---------------------------------------------------------------------------
# analyze


def _params(a) -> an.FrozenParams:
    for name in ("phi_plus", "phi_minus"):
        if getattr(a, name) is None:
            raise DomainError(f"--{name.replace('_plus', '+').replace('_minus', '-')} is required")
    beta_minus = a.beta_plus if a.beta_minus is None else a.beta_minus
    return an.FrozenParams(a.phi_plus, a.phi_minus, a.beta_plus, beta_minus, a.gamma)


def _analyze(a) -> dict:
    sub = a.what
    if sub == "p-select":
        p_minus, p_plus = an.selection_probabilities(_params(a))
        return {"p_minus": p_minus, "p_plus": p_plus}
    if sub == "pi-mass":
        dens = an.invariant_density(_params(a), a.convention)
        return {"mass_minus": dens.mass_minus, "mass_plus": dens.mass_plus, "c": dens.c}
    if sub == "psi-bar":
        p = _params(a)
        m = SmallNoiseModel.constant(p.gamma, p.rate_plus, p.rate_minus, p.noise_plus,
                                     p.noise_minus, a.psi_plus,
                                     a.psi_plus if a.psi_minus is None else a.psi_minus)
        return {"psi_bar": float(an.averaged_drift(m.x0, m, a.convention)[0])}
    if sub == "scale":
        return {"scale": an.scale_function(a.y, _params(a), _eps(a), a.nu)}
    if sub == "exit-bound":
        p = _params(a)
        return {"exit_time_bound": an.exit_time_bound(_delta(a), p, _eps(a)),
                "exit_prob_plus": an.exit_probability_quadrature(_delta(a), p, _eps(a), a.nu)}
    if sub == "gamma-asym":
        if a.A is None:
            raise DomainError("--A is required")
        out = {"asymptotic": an.gamma_asymptotic(a.A, _eps(a), a.gamma)}
        if a.delta is not None:
            q = an.stretched_exp_integral(a.delta, a.A, _eps(a), a.gamma)
            out["quadrature"] = q
            out["rel_error"] = abs(q - out["asymptotic"]) / out["asymptotic"]
        return out
    raise DomainError(f"unknown analysis {sub!r}")  # pragma: no cover


def _eps(a) -> float:
    if a.eps is None:
        raise DomainError("--eps is required")
    return a.eps


def _delta(a) -> float:
    if a.delta is None:
        raise DomainError("--delta is required")
    return a.delta


def cmd_analyze(args) -> int:
    out = _analyze(args)
    for k, v in out.items():
        print(f"{k} = {float(v)!r}")
    if args.csv:
        from .config import config_hash

        inputs = {"analysis": args.what, "gamma": args.gamma, "phi_plus": args.phi_plus,
                  "phi_minus": args.phi_minus, "beta_plus": args.beta_plus,
                  "beta_minus": args.beta_minus, "psi_plus": args.psi_plus,
                  "psi_minus": args.psi_minus, "eps": args.eps, "delta": args.delta,
                  "y": args.y, "nu": args.nu, "A": args.A, "convention": args.convention}
        rows = [{**inputs, "quantity": k, "value": float(v)} for k, v in out.items()]
        write_summary(args.csv, rows, config_hash=config_hash(inputs), seed0=0)
    return 0


# ---------------------------------------------------------------------------
# demo


def cmd_demo(args) -> int:
    from .experiments import run_selection
    from .extremal import extremal_solution

    m = SmallNoiseModel.constant(0.5, 1.0, 1.0)
    est = run_selection(m, args.eps, 0.1, args.n_paths, args.seed0, workers=worker_count(None))
    up = extremal_solution(m, +1, 2.0, 1e-3)
    dn = extremal_solution(m, -1, 2.0, 1e-3)
    print("symmetric square-root drift: gamma = 0.5, rates = 1, noise = 1, slow drift = 0")
    print(f"p_plus_hat = {est.p_plus_hat!r}  (95% CI half-width {est.ci_halfwidth:.4f}, "
          f"n = {est.n_paths}, eps = {args.eps:g})")
    for t in (1.0, 2.0):
        print(f"Y+({t:g}) = {float(up.y_at(t))!r}   Y-({t:g}) = {float(dn.y_at(t))!r}   "
              f"(exact +-{t * t / 4:g})")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_params(p):
    p.add_argument("--gamma", type=float, default=0.5, help="exponent, 0 < gamma < 1")
    p.add_argument("--phi+", dest="phi_plus", type=float, help="fast rate for y >= 0")
    p.add_argument("--phi-", dest="phi_minus", type=float, help="fast rate for y < 0")
    p.add_argument("--beta+", dest="beta_plus", type=float, default=1.0,
                   help="fast noise for y >= 0")
    p.add_argument("--beta-", dest="beta_minus", type=float, default=None,
                   help="fast noise for y < 0 (default: --beta+)")
    p.add_argument("--psi+", dest="psi_plus", type=float, default=0.0,
                   help="slow drift for y >= 0")
    p.add_argument("--psi-", dest="psi_minus", type=float, default=None,
                   help="slow drift for y < 0 (default: --psi+)")
    p.add_argument("--y", type=float, default=0.0)
    p.add_argument("--eps", type=float)
    p.add_argument("--nu", type=float, default=0.0, help="coefficient slack")
    p.add_argument("--delta", type=float)
    p.add_argument("--A", type=float, help="exponent constant for gamma-asym")
    p.add_argument("--convention", choices=an.CONVENTIONS, default="stationary")
    p.add_argument("--csv", help="append a row with inputs and outputs to this CSV")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="holdersel",
        description="Noise-induced selection and averaging for Hölder-continuous dynamics.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the experiment of a config document")
    r.add_argument("config")
    r.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: HOLDERSEL_WORKERS or 1)")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. experiment.n_paths=1000")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check the model assumptions of a config document")
    v.add_argument("config")
    v.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    v.set_defaults(func=cmd_validate)

    a = sub.add_parser("analyze", help="evaluate a closed form")
    a.add_argument("what", choices=("p-select", "psi-bar", "pi-mass", "scale", "exit-bound",
                                    "gamma-asym"))
    _add_params(a)
    a.set_defaults(func=cmd_analyze)

    d = sub.add_parser("demo", help="symmetric square-root example")
    d.add_argument("--n-paths", type=int, default=2000)
    d.add_argument("--eps", type=float, default=1e-3)
    d.add_argument("--seed0", type=int, default=0)
    d.set_defaults(func=cmd_demo)
    return ap


def main(argv=None) -> int:
    """Parse ``argv`` and dispatch; returns the exit status."""
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors exit with 2
        return int(exc.code or 0)
    try:
        return args.func(args)
    except HolderselError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_status(exc)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

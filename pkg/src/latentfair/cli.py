"""Command-line front end for mixture fits, fair models, simulations and formula checks.

Exit codes: 0 success, 2 schema or configuration error, 3 numerical failure,
4 non-convergence (reports are still written).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import jsonschema
import numpy as np

from . import oracles, theory
from .data import DatasetSchema, load_csv, write_csv
from .errors import (
    DegenerateFitError,
    FairnessWarning,
    InvalidArgumentError,
    LatentFairError,
    NumericError,
    SchemaError,
    SeparationError,
    TooLargeError,
    UndefinedMetricError,
)
from .fair import OptimizerConfig, fit_fair_ls, residualize, tradeoff_curve
from .mixture import (
    CategoricalMixtureParams,
    EmConfig,
    GaussianMixtureParams,
    map_classify,
)
from .pipeline import ModelConfig, StageError, fit_mixture_stage, run_pipeline
from .reports import envelope, write_report
from .screening import ScreeningConfig, screen_predictors
from .simulate import SCENARIOS, Scenario, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_NONCONVERGED = 0, 2, 3, 4

_CONFIG_ERRORS = (SchemaError, InvalidArgumentError, TooLargeError, jsonschema.ValidationError, json.JSONDecodeError)
_NUMERIC_ERRORS = (NumericError, DegenerateFitError, SeparationError, UndefinedMetricError, np.linalg.LinAlgError, ArithmeticError)


class ConfigError(LatentFairError):
    pass


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------


def _floats(value, name="value") -> list:
    """Accept ``"0,0.1,1"``, a number, or a JSON list."""
    if value is None:
        return []
    if isinstance(value, (int, float)):
        return [float(value)]
    if isinstance(value, str):
        value = [v for v in value.replace(";", ",").split(",") if v.strip()]
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a comma-separated list of numbers") from None


def _json_arg(value, name):
    if value is None:
        raise ConfigError(f"--{name} is required")
    if isinstance(value, (list, dict)):
        return value
    text = value
    if os.path.exists(value):
        with open(value, encoding="utf-8") as fh:
            text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--{name}: invalid JSON ({exc})") from None


def _em(args) -> EmConfig:
    return EmConfig(max_iter=int(args.em_max_iter), rel_tol=float(args.em_tol), n_restarts=int(args.restarts), seed=int(args.seed))


def _opt(args) -> OptimizerConfig:
    return OptimizerConfig(
        method=args.optimizer, step=float(args.step), grad_tol=float(args.grad_tol), max_iter=int(args.max_iter)
    )


def _schema(args) -> DatasetSchema:
    if not args.schema:
        raise ConfigError("--schema is required")
    schema = DatasetSchema.from_json(args.schema, path=args.data)
    d = {k: getattr(schema, k) for k in schema.__dataclass_fields__}
    if args.split is not None:
        d["split"] = float(args.split)
    if args.seed is None:
        args.seed = schema.seed
    d["seed"] = int(args.seed)
    return DatasetSchema(**d)


# ---------------------------------------------------------------------------
# Commands: each returns (results, warnings, status)
# ---------------------------------------------------------------------------


def _load(args):
    schema = _schema(args)
    try:
        return load_csv(schema)
    except LatentFairError as exc:
        raise StageError("load", exc) from exc


def _status(fits) -> str:
    return "ok" if all(f["fit"]["converged"] for f in fits) else "non_converged"


def cmd_fit_mixture(args):
    part = _load(args)
    stage = fit_mixture_stage(part, int(args.K), _em(args))
    rows = [
        (int(r), *map(float, p), int(g))
        for r, p, g in zip(part.train.rows, stage.post_train, map_classify(stage.post_train))
    ]
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "posterior_train.csv")
    write_csv(path, ["row", *[f"a{k}" for k in range(int(args.K))], "group"], rows)
    result = {"mixture": stage.fit.to_json(), "posterior_csv": path, "family": part.family}
    return result, list(part.warnings) + list(stage.fit.warnings), "ok" if stage.fit.converged else "non_converged"


def _fit_command(args, task, grid_name):
    grid = _floats(getattr(args, grid_name), grid_name)
    if not grid:
        raise ConfigError(f"--{grid_name} is required")
    part = _load(args)
    cfg = ModelConfig(task=task, K=int(args.K), grid=tuple(grid), delta=float(args.delta), em=_em(args), opt=_opt(args))
    results, notes = run_pipeline(part, cfg, out_dir=args.out)
    return results, notes, _status(results["fits"])


def cmd_fit_regression(args):
    return _fit_command(args, "regression", "epsilon")


def cmd_fit_classifier(args):
    return _fit_command(args, "classification", "lam")


def cmd_tradeoff(args):
    grid = _floats(args.grid, "grid")
    if not grid:
        raise ConfigError("--grid is required")
    part = _load(args)
    stage = fit_mixture_stage(part, int(args.K), _em(args))
    U = residualize(part.train.other, stage.post_train).residuals
    curve = tradeoff_curve(part.train.y, stage.post_train, U, grid, task=args.task, delta=float(args.delta), opt=_opt(args))
    rows = [(p.tuning, p.loss, p.fairness, p.penalty, p.error) for p in curve.points]
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "tradeoff.csv")
    write_csv(path, ["tuning", "loss", "fairness", "penalty", "error"], rows)
    points = [
        {"tuning": p.tuning, "loss": p.loss, "fairness": p.fairness, "penalty": p.penalty, "error": p.error,
         "fit": None if p.fit is None else p.fit.to_json()}
        for p in curve.points
    ]
    converged = all(p.fit is not None and getattr(p.fit, "converged", True) for p in curve.points)
    notes = list(part.warnings) + ([] if curve.monotone else ["fitted criterion is not monotone along the grid"])
    return {"task": args.task, "monotone": curve.monotone, "points": points, "csv": path}, notes, (
        "ok" if converged else "non_converged"
    )


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_simulate(args):
    scn = Scenario(args.scenario, _overrides(args.set), seed=int(args.seed))
    grid = _floats(args.grid, "grid") if args.grid is not None else None
    rows = run_scenario(scn, grid, replicates=int(args.replicates), out_dir=args.out)
    return {
        "scenario": scn.name,
        "rows": len(rows),
        "csv": os.path.join(args.out, f"{scn.name}.csv"),
        "manifest": os.path.join(args.out, f"{scn.name}.manifest.json"),
    }, [], "ok"


def _categorical_params(args) -> CategoricalMixtureParams:
    tables = [np.asarray(t, dtype=float) for t in _json_arg(args.tables, "tables")]
    return CategoricalMixtureParams(np.asarray(_floats(args.mixing, "mixing")), tuple(tables))


def cmd_theory(args):
    calc = args.calc
    mixing = _floats(args.mixing, "mixing")
    if calc == "separation":
        value = theory.separation_threshold(mixing, float(args.alpha))
        inputs = {"mixing": mixing, "alpha": float(args.alpha)}
    elif calc == "gaussian-uni":
        means = _floats(args.means, "means")
        value = theory.gaussian_accuracy_uni(means, float(args.sigma), mixing)
        inputs = {"means": means, "sigma": float(args.sigma), "mixing": mixing}
    elif calc == "gaussian-multi":
        means = _json_arg(args.means, "means")
        cov = _json_arg(args.cov, "cov")
        value = theory.gaussian_accuracy_multi(means, cov, mixing)
        inputs = {"means": means, "cov": cov, "mixing": mixing}
    elif calc == "categorical":
        params = _categorical_params(args)
        value = theory.categorical_accuracy(params)
        inputs = {"mixing": mixing, "tables": [t.tolist() for t in params.probs]}
    elif calc == "categorical-binary":
        value = theory.categorical_accuracy_binary(float(args.p), float(args.theta1), float(args.theta2))
        inputs = {"p": float(args.p), "theta1": float(args.theta1), "theta2": float(args.theta2)}
    elif calc == "identifiability":
        arities = [int(v) for v in _floats(args.arities, "arities")]
        v = theory.identifiability_check(int(args.K), arities)
        return {"quantity": calc, "n_mix": v.n_mix, "n_joint": v.n_joint, "identifiable": v.identifiable,
                "inputs": {"K": int(args.K), "arities": arities}}, [], "ok"
    elif calc == "r2-univariate":
        rx, ra = theory.r2_univariate(float(args.beta1), float(args.mu), float(args.p), float(args.sigma_e), float(args.sigma_eps))
        return {"quantity": calc, "r2_x": rx, "r2_a": ra}, [], "ok"
    elif calc == "r2-general":
        fields = _json_arg(args.inputs, "inputs")
        try:
            rx, ra = theory.r2_general(theory.R2Inputs(**fields))
        except TypeError as exc:
            raise ConfigError(f"--inputs: {exc}") from None
        return {"quantity": calc, "r2_x": rx, "r2_a": ra}, [], "ok"
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown calculator {calc}")
    return theory.TheoryReport(calc, value, inputs).to_json(), [], "ok"


def cmd_verify(args):
    oracle = args.oracle
    mixing = _floats(args.mixing, "mixing")
    if oracle == "gaussian-threshold":
        means = _floats(args.means, "means")
        ref = oracles.gaussian_threshold_accuracy(means, float(args.sigma), mixing)
        val = theory.gaussian_accuracy_uni(means, float(args.sigma), mixing)
        tol = 1e-10
    elif oracle == "enumerate-categorical":
        params = _categorical_params(args)
        ref = oracles.enumerate_categorical_accuracy(params)
        val = theory.categorical_accuracy(params)
        tol = 1e-12
    elif oracle == "mc-accuracy":
        if args.tables is not None:
            params = _categorical_params(args)
            val = theory.categorical_accuracy(params)
        else:
            means = _floats(args.means, "means")
            params = GaussianMixtureParams(np.asarray(mixing), np.asarray(means)[:, None], [[float(args.sigma) ** 2]])
            val = theory.gaussian_accuracy_uni(means, float(args.sigma), mixing)
        rep = oracles.mc_classification_accuracy(params, int(args.n), int(args.seed))
        ref, tol = rep.value, 3 * rep.se
    elif oracle == "dual-scan":
        eps = float(args.epsilon)
        if args.seed is None:
            args.seed = 0
        part = _load(args)
        stage = fit_mixture_stage(part, int(args.K), _em(args))
        U = residualize(part.train.other, stage.post_train).residuals
        _, ref = oracles.dual_scan_fair_ls(part.train.y, stage.post_train, U, eps)
        val = fit_fair_ls(part.train.y, stage.post_train, U, eps).sse
        tol = 1e-6 * max(1.0, abs(ref))
    else:  # pragma: no cover
        raise ConfigError(f"unknown oracle {oracle}")
    diff = abs(val - ref)
    return {"oracle": oracle, "oracle_value": ref, "module_value": val, "abs_diff": diff, "tolerance": tol,
            "agree": bool(diff <= tol)}, [], "ok"


def cmd_screen(args):
    if not args.candidates:
        raise ConfigError("--candidates is required")
    part = _load(args)
    schema = _schema(args)
    names = [s.strip() for s in args.candidates.split(";") if s.strip()]
    numeric = list(schema.sensitive_continuous) + part.other_names
    matrix = np.column_stack([part.train.sens_cont, part.train.other])
    cands = []
    for cand in names:
        cols = [c.strip() for c in cand.split(",") if c.strip()]
        missing = [c for c in cols if c not in numeric]
        if missing:
            raise ConfigError(f"candidate columns not numeric predictors: {missing}")
        cands.append([numeric.index(c) for c in cols])
    model_cols = list(range(part.train.sens_cont.shape[1], matrix.shape[1]))
    cfg = ScreeningConfig(em=_em(args), model_columns=tuple(model_cols), epsilon=float(args.epsilon or 0.0),
                          lam=float(args.lam or 1.0), delta=float(args.delta), criterion=args.criterion, opt=_opt(args))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", FairnessWarning)
        res = screen_predictors(matrix, part.train.y, cands, task=args.task, K=int(args.K), cfg=cfg)
    table = [dict(r.to_json(), columns=[numeric[j] for j in r.candidate]) for r in res]
    maximize = args.task == "regression"
    ranked = sorted(table, key=lambda r: (r["failed"] is not None, -r["criterion"] if maximize else r["criterion"]))
    return {"task": args.task, "ranking": ranked}, list(part.warnings) + [str(w.message) for w in caught], "ok"


COMMANDS = {
    "fit-mixture": cmd_fit_mixture,
    "fit-regression": cmd_fit_regression,
    "fit-classifier": cmd_fit_classifier,
    "tradeoff": cmd_tradeoff,
    "simulate": cmd_simulate,
    "theory": cmd_theory,
    "verify": cmd_verify,
    "screen": cmd_screen,
}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common(p, data=True, model=True):
    p.add_argument("--seed", type=int, help="seed for every random component (default: the schema's, else 0)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--config", help="flat JSON file of option defaults; flags override it")
    if data:
        p.add_argument("--schema", help="dataset schema JSON")
        p.add_argument("--data", help="CSV path (overrides the schema's path)")
        p.add_argument("--split", type=float, help="training fraction (overrides the schema)")
    if model:
        p.add_argument("--K", type=int, default=2, help="number of mixture components")
        p.add_argument("--restarts", type=int, default=5)
        p.add_argument("--em-max-iter", type=int, default=500)
        p.add_argument("--em-tol", type=float, default=1e-8)
        p.add_argument("--delta", type=float, default=1e-8, help="penalty smoothing")
        p.add_argument("--optimizer", choices=("newton", "adam"), default="newton")
        p.add_argument("--step", type=float, default=1e-2, help="adam step size")
        p.add_argument("--grad-tol", type=float, default=1e-6)
        p.add_argument("--max-iter", type=int, default=50_000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentfair", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-mixture", help="fit the sensitive-attribute mixture on the training split")
    _common(p)
    p = sub.add_parser("fit-regression", help="fairness-constrained least squares")
    _common(p)
    p.add_argument("--epsilon", help="R^2 bound(s), comma separated")
    p = sub.add_parser("fit-classifier", help="fairness-penalized logistic regression")
    _common(p)
    p.add_argument("--lam", help="penalty weight(s), comma separated")
    p = sub.add_parser("tradeoff", help="accuracy/fairness curve over a tuning grid")
    _common(p)
    p.add_argument("--task", choices=("regression", "classification"), default="classification")
    p.add_argument("--grid", help="comma-separated tuning values, ascending")

    p = sub.add_parser("simulate", help="run a simulation scenario")
    _common(p, data=False, model=False)
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("set", nargs="*", help="parameter overrides key=value")
    p.add_argument("--grid", help="comma-separated grid (scenario default otherwise)")
    p.add_argument("--replicates", type=int, default=1)

    p = sub.add_parser("theory", help="closed-form calculators")
    _common(p, data=False, model=False)
    p.add_argument(
        "calc",
        choices=("separation", "gaussian-uni", "gaussian-multi", "categorical", "categorical-binary",
                 "identifiability", "r2-univariate", "r2-general"),
    )
    _theory_args(p)

    p = sub.add_parser("verify", help="compare a formula with its brute-force oracle")
    _common(p, model=True)
    p.add_argument("oracle", choices=("gaussian-threshold", "enumerate-categorical", "mc-accuracy", "dual-scan"))
    _theory_args(p, with_k=False)
    p.add_argument("--n", type=int, default=100_000, help="Monte-Carlo draws")
    p.add_argument("--epsilon", type=float, default=0.1)

    p = sub.add_parser("screen", help="choose the predictors that drive the mixture")
    _common(p)
    p.add_argument("--candidates", help="candidate column sets: 'a,b;c;d'")
    p.add_argument("--task", choices=("regression", "classification"), default="regression")
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--criterion", choices=("md", "error"), default="md")
    return parser


def _theory_args(p, with_k=True):
    p.add_argument("--mixing", help="mixing weights, comma separated")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--means", help="means: comma list (univariate) or JSON K x p")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--cov", help="JSON covariance matrix")
    p.add_argument("--tables", help="JSON list of K x m_d probability tables (or a file)")
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--theta1", type=float, default=0.5)
    p.add_argument("--theta2", type=float, default=0.5)
    if with_k:
        p.add_argument("--K", type=int, default=2)
    p.add_argument("--arities", help="category counts, comma separated")
    p.add_argument("--beta1", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--sigma-e", type=float, default=1.0)
    p.add_argument("--sigma-eps", type=float, default=1.0)
    p.add_argument("--inputs", help="JSON object (or file) with the R2Inputs fields")


def _load_config(argv) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    try:
        with open(known.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {known.config}: {exc}") from None
    if not isinstance(cfg, dict) or any(isinstance(v, dict) for v in cfg.values()):
        raise ConfigError("config must be a flat JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _apply_config(parser, argv, cfg):
    if not cfg:
        return
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    known, _ = pre.parse_known_args([a for a in argv if not a.startswith("-")][:1])
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = subparsers.choices.get(known.command)
    if sp is None:
        return
    dests = {a.dest for a in sp._actions}
    unknown = set(cfg) - dests - {"config"}
    if unknown:
        raise ConfigError(f"unknown config keys for {known.command}: {sorted(unknown)}")
    sp.set_defaults(**{k: v for k, v in cfg.items() if k != "config"})


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv, _load_config(argv))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    command = args.command
    if not getattr(args, "schema", None) and args.seed is None:
        args.seed = 0
    error, code, status, results, notes = None, EXIT_OK, "ok", None, []
    try:
        if args.seed is not None and int(args.seed) < 0:
            raise ConfigError("--seed must be a nonnegative integer")
        results, notes, status = COMMANDS[command](args)
        if status == "non_converged":
            code = EXIT_NONCONVERGED
    except (ConfigError, StageError, *_CONFIG_ERRORS, *_NUMERIC_ERRORS, LatentFairError) as exc:
        stage = exc.stage if isinstance(exc, StageError) else command
        cause = exc.cause if isinstance(exc, StageError) else exc
        code = EXIT_NUMERIC if isinstance(cause, _NUMERIC_ERRORS) else EXIT_CONFIG
        status = "error"
        error = {"stage": stage, "type": type(cause).__name__, "message": str(cause)}
        print(f"error [{stage}] {type(cause).__name__}: {cause}", file=sys.stderr)
    seed = args.seed
    report = envelope(command, results, seed=int(seed) if isinstance(seed, int) and seed >= 0 else None,
                      warnings=notes, status=status, error=error)
    try:
        path = write_report(report, args.out, f"{command}.json")
    except OSError as exc:
        print(f"error: cannot write report: {exc}", file=sys.stderr)
        return code or EXIT_CONFIG
    print(f"{command}: {status} -> {path}")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

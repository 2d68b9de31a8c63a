"""Command-line interface: ``nestedsim design|estimate|reproduce``.

Exit codes: 0 success, 2 configuration error, 3 numerical or solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import jsonschema
import numpy as np

from .benchmarks import figures
from .benchmarks.erm import StraddleConfig, straddle_model, straddle_outer_scenarios, straddle_payoff
from .benchmarks.newsvendor import (
    NewsvendorConfig,
    generate_data,
    newsvendor_model,
    newsvendor_profit,
    posterior_sample,
)
from .benchmarks.studies import (
    MEASURES,
    budget_growth_study,
    coverage_study,
    run_macro_study,
    variance_ratio_diagnostic,
)
from .design import DesignSolution, as_scenario_matrix, compute_second_moments, solve_design
from .estimators import SimulationError, pooled_conditional_means, risk_report, simulate_pool
from .input_models import ExponentialFamilyModel, model_from_config
from .lp_solver import LpSolverError
from .reporting import config_hash, write_csv, write_json
from .rng import DATA, OUTER, make_stream

log = logging.getLogger("nestedsim")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    pass


_STRADDLE_KEYS = {f.name: {"type": "number"} for f in fields(StraddleConfig) if f.type in ("float", float)}
_NEWSVENDOR_KEYS = {f.name: {"type": "number"} for f in fields(NewsvendorConfig)}

CONFIG_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "problem": {"enum": ["erm-straddle", "newsvendor", "custom"]},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"type": "string"},
                "dim": {"type": "integer", "minimum": 1},
                "hyper": {"type": "object"},
            },
        },
        "scenarios": {"type": "array", "minItems": 1},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["constant", "polynomial"]},
                "value": {"type": "number"},
                "coefficients": {"type": "array", "items": {"type": "number"}, "minItems": 1},
            },
        },
        "M": {"type": "integer", "minimum": 1},
        "target_N": {"type": "integer", "minimum": 1},
        "delta": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "n_macro": {"type": "integer", "minimum": 2},
        "oracle_size": {"type": "integer", "minimum": 1},
        "test_size": {"type": "integer", "minimum": 1},
        "out_dir": {"type": "string"},
        "paper_compat": {"type": "boolean"},
        "xi": {"type": "number"},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "straddle": {"type": "object", "additionalProperties": False, "properties": _STRADDLE_KEYS},
        "newsvendor": {"type": "object", "additionalProperties": False, "properties": _NEWSVENDOR_KEYS},
    },
    "required": ["problem"],
}

DEFAULTS = {"target_N": 1000, "delta": 1e-6, "seed": 0, "xi": 49.0, "alpha": 0.99, "paper_compat": False}


def load_config(path: str | None, overrides: dict[str, Any]) -> dict[str, Any]:
    """Read, override and validate a config; raises :class:`ConfigError`."""
    config: dict[str, Any] = {}
    if path is not None:
        try:
            config = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    config.update({k: v for k, v in overrides.items() if v is not None})
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc
    if config["problem"] == "custom":
        missing = [k for k in ("model", "scenarios", "output") if k not in config]
        if missing:
            raise ConfigError(f"custom problem needs {missing}")
    return config


def _setting(config: dict, key: str):
    return config.get(key, DEFAULTS.get(key))


def straddle_config(config: dict) -> StraddleConfig:
    cfg = StraddleConfig(**config.get("straddle", {}))
    return replace(
        cfg,
        M=int(config.get("M", cfg.M)),
        paper_compat=bool(_setting(config, "paper_compat")),
        xi=float(_setting(config, "xi")),
        alpha=float(_setting(config, "alpha")),
    )


def newsvendor_config(config: dict) -> NewsvendorConfig:
    raw = dict(config.get("newsvendor", {}))
    ints = {"L", "stock_base", "data_base", "data_step", "M", "N"}
    raw = {k: int(v) if k in ints else v for k, v in raw.items()}
    cfg = NewsvendorConfig(**raw)
    return replace(cfg, M=int(config.get("M", cfg.M)), N=int(config.get("target_N", cfg.N)))


def _custom_output(spec: dict) -> Callable[[np.ndarray], np.ndarray]:
    if spec["kind"] == "constant":
        value = float(spec.get("value", 0.0))
        return lambda x: np.full(x.shape[0], value)
    coef = np.asarray(spec.get("coefficients", [0.0, 1.0]), dtype=float)

    def poly(x):
        powers = np.stack([x**k for k in range(coef.size)], axis=-1)
        return (powers @ coef).sum(axis=-1)

    return poly


def build_problem(config: dict) -> tuple[ExponentialFamilyModel, np.ndarray, Callable]:
    """Model, scenario matrix and output function described by ``config``."""
    seed = int(_setting(config, "seed"))
    kind = config["problem"]
    try:
        if kind == "erm-straddle":
            cfg = straddle_config(config)
            model = straddle_model(cfg)
            return model, as_scenario_matrix(model, straddle_outer_scenarios(cfg)), lambda x: straddle_payoff(cfg, x)
        if kind == "newsvendor":
            cfg = newsvendor_config(config)
            model = newsvendor_model(cfg)
            data = generate_data(cfg, make_stream(seed, 0, DATA))
            theta = posterior_sample(cfg, data, cfg.M, make_stream(seed, 0, OUTER))
            return model, theta, lambda x: newsvendor_profit(cfg, x)
        model = model_from_config(config["model"])
        return model, as_scenario_matrix(model, config["scenarios"]), _custom_output(config["output"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _digest(config: dict) -> str:
    return config_hash({k: v for k, v in config.items() if k not in ("seed", "out_dir", "n_macro")})


def _out_dir(args, config: dict) -> Path:
    out = Path(args.out or config.get("out_dir") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# Commands -----------------------------------------------------------------


def cmd_design(args, config: dict) -> int:
    model, theta, _ = build_problem(config)
    target = int(_setting(config, "target_N"))
    table = compute_second_moments(model, theta)
    design = solve_design(table, target, float(_setting(config, "delta")))
    payload = design.to_json_dict()
    payload["config_sha256"] = _digest(config)
    payload["seed"] = int(_setting(config, "seed"))
    path = write_json(_out_dir(args, config) / "design.json", payload)
    m = theta.shape[0]
    print(f"budget {design.budget}")
    print(f"M*N {m * target}")
    print(f"savings_ratio {m * target / design.budget:.6g}")
    print(f"sampling_scenarios {design.sampling_scenarios.size}")
    print(f"wrote {path}")
    return 0


def cmd_estimate(args, config: dict) -> int:
    model, theta, g = build_problem(config)
    try:
        payload = json.loads(Path(args.design).read_text())
        design = DesignSolution.from_json_dict(payload)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read design {args.design}: {exc}") from exc
    if design.size != theta.shape[0] or payload.get("config_sha256") not in (None, _digest(config)):
        raise ConfigError("design file does not match the configured scenarios")
    seed = int(_setting(config, "seed"))
    pool = simulate_pool(model, theta, design, g, seed)
    mu = pooled_conditional_means(pool, design, model, theta).mu_star
    xi, alpha = float(_setting(config, "xi")), float(_setting(config, "alpha"))
    report = risk_report(mu, xi, alpha)
    out = _out_dir(args, config)
    digest = _digest(config)
    cols = ["scenario"] + [f"theta{k}" for k in range(theta.shape[1])] + ["mu_star"]
    write_csv(
        out / "estimates.csv",
        cols,
        ([i, *theta[i], mu[i]] for i in range(theta.shape[0])),
        config_digest=digest,
        seed=seed,
    )
    write_csv(
        out / "risk_report.csv",
        ["statistic", "value", "xi", "alpha"],
        ([k, report[k], xi, alpha] for k in MEASURES),
        config_digest=digest,
        seed=seed,
    )
    for k in MEASURES:
        print(f"{k} {report[k]!r}")
    return 0


def _check(label: str, ok: bool) -> bool:
    print(f"[{'PASS' if ok else 'FAIL'}] {label}")
    return ok


def _reproduce_erm(args, config: dict, out: Path, digest: str, seed: int, n_macro: int) -> None:
    cfg = straddle_config(config)
    M_list = args.M or [512, 1024]
    report = run_macro_study(
        cfg,
        n_macro=n_macro,
        seed=seed,
        M_list=M_list,
        oracle_draws=int(config.get("oracle_size", 10**6)),
        threads=args.threads,
    )
    cols = ["M", "design", "measure", "mse", "bias2", "variance", "truth", "budget", "n_macro", "seed"]
    write_csv(out / "table_erm_mse.csv", cols, report.rows, config_digest=digest, seed=seed)
    for M in M_list:
        for m in MEASURES:
            _check(f"M={M} {m}: optimal MSE < standard MSE", report.mse(M, "optimal", m) < report.mse(M, "standard", m))
    if len(M_list) >= 2:
        a, b = M_list[0], M_list[1]
        for m in MEASURES:
            ratio = report.mse(b, "optimal", m) / report.mse(a, "optimal", m)
            _check(f"MSE(M={b})/MSE(M={a}) {m} = {ratio:.3f} in [0.3, 0.8]", 0.3 <= ratio <= 0.8)
    if 512 in M_list:
        q = report.mse(512, "optimal", "quantile")
        _check(f"optimal quantile MSE at M=512 = {q:.3f} in [2, 15]", 2 <= q <= 15)


def _reproduce_newsvendor(args, config: dict, out: Path, digest: str, seed: int, n_macro: int) -> None:
    cfg = newsvendor_config(config)
    report = coverage_study(
        cfg, n_macro=n_macro, test_size=int(config.get("test_size", 10**5)), seed=seed, threads=args.threads
    )
    cols = ["design", "level", "coverage", "coverage_se", "width", "width_se", "n_macro", "seed"]
    write_csv(out / "table_newsvendor_cri.csv", cols, report.rows(), config_digest=digest, seed=seed)
    print(f"mean optimal budget {report.budgets.mean():.1f}")
    for lv, target in zip(report.levels, (0.887, 0.940, 0.985)):
        c = report.mean_coverage("optimal", lv)
        _check(f"optimal coverage at {lv} = {c:.4f} within 0.02 of {target}", abs(c - target) <= 0.02)
    for lv, target in zip(report.levels, (0.898, 0.948, 0.988)):
        c = report.mean_coverage("oracle", lv)
        _check(f"oracle coverage at {lv} = {c:.4f} within 0.015 of {target}", abs(c - target) <= 0.015)
    for lv in report.levels:
        c = report.mean_coverage("standard", lv)
        w = report.mean_width("standard", lv) / report.mean_width("oracle", lv)
        _check(f"standard coverage at {lv} = {c:.4f} >= 0.999 and width ratio {w:.2f} >= 2", c >= 0.999 and w >= 2)


def _reproduce_budget(args, config: dict, out: Path, digest: str, seed: int, n_macro: int) -> None:
    cfg = newsvendor_config(config)
    M_list = args.M or [1000, 2000, 4000, 8000]
    report = budget_growth_study(cfg, M_list, seed, n_macro=args.repeats, threads=args.threads)
    write_csv(
        out / "figure_budget_growth.csv",
        ["M", "N", "budget", "budget_over_M"],
        figures.budget_series(report),
        config_digest=digest,
        seed=seed,
    )
    if len(M_list) >= 2:
        _check(f"log-log slope {report.slope:.3f} in [0.95, 1.25]", 0.95 <= report.slope <= 1.25)


def _reproduce_variance_ratio(args, config: dict, out: Path, digest: str, seed: int, n_macro: int) -> None:
    cfg = newsvendor_config(config)
    report = variance_ratio_diagnostic(cfg, n_macro=n_macro, seed=seed, threads=args.threads)
    write_csv(
        out / "figure_variance_ratio_hist.csv",
        ["bin_left", "bin_right", "count"],
        figures.ratio_histogram(report),
        config_digest=digest,
        seed=seed,
    )
    write_csv(
        out / "variance_ratios.csv",
        ["scenario", "ratio", "mc_variance", "pooled_variance"],
        zip(range(report.ratios.size), report.ratios, report.mc_variance, report.pooled_variance),
        config_digest=digest,
        seed=seed,
    )
    _check(f"mean ratio {report.mean:.3f} in [1.0, 1.4]", 1.0 <= report.mean <= 1.4)
    _check(f"max ratio {report.max:.3f} <= 1.6", report.max <= 1.6)


def _reproduce_figures(args, config: dict, out: Path, digest: str, seed: int, n_macro: int) -> None:
    cfg = straddle_config(config)
    write_csv(
        out / "figure_outer_distribution.csv",
        ["theta", "density", "mu"],
        figures.outer_distribution_series(cfg),
        config_digest=digest,
        seed=seed,
    )
    M = (args.M or [cfg.M])[0]
    report = run_macro_study(
        cfg,
        designs=("optimal", "standard_plus", "regression"),
        n_macro=n_macro,
        seed=seed,
        M_list=[M],
        oracle_draws=int(config.get("oracle_size", 10**5)),
        threads=args.threads,
        keep_estimates=True,
    )
    rows = figures.confidence_band_series(cfg, report, M)
    write_csv(out / "figure_confidence_bands.csv", list(rows[0]), rows, config_digest=digest, seed=seed)


_STUDIES = {
    "erm": ("erm-straddle", _reproduce_erm),
    "newsvendor": ("newsvendor", _reproduce_newsvendor),
    "budget-growth": ("newsvendor", _reproduce_budget),
    "variance-ratio": ("newsvendor", _reproduce_variance_ratio),
    "figures": ("erm-straddle", _reproduce_figures),
}


def cmd_reproduce(args, config: dict) -> int:
    problem, runner = _STUDIES[args.study]
    if config.get("problem", problem) != problem:
        raise ConfigError(f"study {args.study} needs problem {problem!r}")
    config = {**config, "problem": problem}
    seed = int(_setting(config, "seed"))
    n_macro = int(config.get("n_macro", 200))
    out = _out_dir(args, config)
    runner(args, config, out, _digest(config), seed, n_macro)
    return 0


# Entry point --------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--problem", choices=["erm-straddle", "newsvendor", "custom"], help="problem when no config names one")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--macro", type=int, help="number of macro runs")
    common.add_argument("--out", help="output directory")
    common.add_argument("--paper-compat", action="store_true", default=None, help="ERM second moment without the horizon factor in the log-variance")
    common.add_argument("--threads", type=int, default=1, help="worker threads for macro runs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="nestedsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("design", parents=[common], help="solve the optimal design and write design.json")
    est = sub.add_parser("estimate", parents=[common], help="run a design and estimate the risk statistics")
    est.add_argument("--design", required=True, help="design.json from the design command")
    rep = sub.add_parser("reproduce", parents=[common], help="run a case study and emit its tables")
    rep.add_argument("study", choices=sorted(_STUDIES))
    rep.add_argument("--M", type=_int_list, help="comma-separated scenario counts")
    rep.add_argument("--repeats", type=int, default=1, help="posterior draws averaged per M (budget-growth)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {"seed": args.seed, "n_macro": args.macro, "paper_compat": args.paper_compat, "problem": args.problem}
    try:
        if args.config is None and args.problem is None:
            overrides["problem"] = _STUDIES[args.study][0] if args.command == "reproduce" else "erm-straddle"
        config = load_config(args.config, overrides)
        handler = {"design": cmd_design, "estimate": cmd_estimate, "reproduce": cmd_reproduce}[args.command]
        return handler(args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LpSolverError, SimulationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

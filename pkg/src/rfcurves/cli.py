"""Command-line sweeps producing CSV or JSON-lines tables.

Subcommands: ``theory``, ``simulate``, ``compare``, ``universality`` and
``sparsity``. A sweep is described by a JSON document (``--config``); every
field can also be overridden by a long flag with the field's name.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .predictor import DerivativeInconsistency, predict
from .regularizers import ElasticNet, SignalSpec
from .saddle import ProblemSpec, SaddleNonConvergence, SolverOptions, UnboundedDirection
from .simulator import (
    AggregateFailure,
    ExperimentConfig,
    SolverNonConvergence,
    activation_constants,
    run_trials,
)

MODES = ("theory", "simulate", "compare", "universality", "sparsity")
AXES = ("gamma", "lambda")

ROW_ERRORS = (
    SaddleNonConvergence,
    UnboundedDirection,
    DerivativeInconsistency,
    AggregateFailure,
    SolverNonConvergence,
    ArithmeticError,
)

COLUMNS = {
    "theory": [
        "gamma", "lambda", "alpha", "train_theory", "gen_theory", "nonzero_theory",
        "beta", "q", "xi", "t", "residual", "error",
    ],
    "simulate": [
        "gamma", "lambda", "alpha", "n", "m", "d", "trials", "failures",
        "train_emp", "train_se", "gen_emp", "gen_se", "nonzero_emp", "nonzero_se", "error",
    ],
    "compare": [
        "gamma", "lambda", "alpha", "train_theory", "gen_theory", "nonzero_theory",
        "train_emp", "train_se", "gen_emp", "gen_se", "nonzero_emp", "nonzero_se",
        "relative_gap_train", "relative_gap_gen", "relative_gap_nonzero", "error",
    ],
    "universality": [
        "gamma", "lambda", "alpha",
        "train_nonlinear", "train_nonlinear_se", "gen_nonlinear", "gen_nonlinear_se",
        "nonzero_nonlinear", "nonzero_nonlinear_se",
        "train_surrogate", "train_surrogate_se", "gen_surrogate", "gen_surrogate_se",
        "nonzero_surrogate", "nonzero_surrogate_se",
        "z_train", "z_gen", "z_nonzero", "error",
    ],
    "sparsity": [
        "gamma", "lambda", "alpha", "nonzero_over_m", "nonzero_over_n",
        "nonzero_over_m_emp", "nonzero_over_m_se", "nonzero_over_n_emp", "nonzero_over_n_se",
        "gen_theory", "error",
    ],
}


@dataclass(frozen=True)
class SweepConfig:
    """One sweep along ``gamma`` or ``lambda`` with every other parameter fixed."""

    mode: str = "theory"
    sweep_axis: str = "gamma"
    axis_values: tuple = (1.0,)
    gamma: float = 1.0
    lam: float = 1e-3
    alpha: float = 1e-2
    delta: float = 1.0
    sigma_eps2: float = 0.1
    activation: str = "tanh"
    signal: tuple = ((0.0, 0.5), (1.0, 0.5))
    total: int = 1000
    seed: int = 0
    trials: int = 20
    test_size: Optional[int] = None
    zero_threshold_scale: float = 0.01
    empirical: bool = True
    threads: int = 1
    output_path: Optional[str] = None
    format: str = "csv"
    solver: dict = field(default_factory=lambda: SolverOptions().to_dict())

    def __post_init__(self):
        object.__setattr__(self, "axis_values", tuple(float(v) for v in self.axis_values))
        object.__setattr__(self, "signal", tuple((float(v), float(w)) for v, w in self.signal))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.sweep_axis not in AXES:
            raise ValueError(f"sweep_axis must be one of {AXES}")
        if not self.axis_values:
            raise ValueError("axis_values must be nonempty")
        if any(b <= a for a, b in zip(self.axis_values, self.axis_values[1:])):
            raise ValueError("axis_values must be strictly increasing")
        if self.format not in ("csv", "jsonl"):
            raise ValueError("format must be csv or jsonl")
        if self.trials < 1 or self.threads < 1:
            raise ValueError("trials and threads must be positive")
        SignalSpec(self.signal)
        SolverOptions(**self.solver)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SweepConfig":
        data = json.loads(text)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def point(self, value: float) -> tuple[float, float]:
        """``(gamma, lam)`` at one axis value."""
        if self.sweep_axis == "gamma":
            return value, self.lam
        return self.gamma, value

    @property
    def solver_options(self) -> SolverOptions:
        return SolverOptions(**self.solver)


def _problem(cfg: SweepConfig, gamma: float, lam: float) -> ProblemSpec:
    rho1, rs2 = activation_constants(cfg.activation)
    return ProblemSpec.from_ratios(
        gamma, cfg.delta, cfg.sigma_eps2, rho1, rs2, ElasticNet(lam, cfg.alpha), SignalSpec(cfg.signal)
    )


def _experiment(cfg: SweepConfig, gamma: float, lam: float) -> ExperimentConfig:
    return ExperimentConfig.from_ratios(
        gamma,
        cfg.delta,
        cfg.total,
        sigma_eps2=cfg.sigma_eps2,
        reg=ElasticNet(lam, cfg.alpha),
        signal=SignalSpec(cfg.signal),
        activation=cfg.activation,
        seed=cfg.seed,
        trials=cfg.trials,
        test_size=cfg.test_size,
        zero_threshold_scale=cfg.zero_threshold_scale,
    )


def _theory_cols(cfg, gamma, lam) -> dict:
    pred = predict(_problem(cfg, gamma, lam), cfg.solver_options)
    s = pred.saddle
    return {
        "train_theory": pred.train_error,
        "gen_theory": pred.gen_error,
        "nonzero_theory": pred.nonzero_fraction,
        "beta": s.beta,
        "q": s.q,
        "xi": s.xi,
        "t": s.t,
        "residual": s.residual,
    }


def _emp_cols(cfg, gamma, lam) -> dict:
    ex = _experiment(cfg, gamma, lam)
    agg = run_trials(ex, "nonlinear", threads=cfg.threads)
    out = {"n": ex.n, "m": ex.m, "d": ex.d, "trials": agg.trials, "failures": agg.failures}
    for key in ("train", "gen", "nonzero"):
        out[f"{key}_emp"] = agg.means[key]
        out[f"{key}_se"] = agg.std_errors[key]
    return out


def _rel(a, b):
    return abs(a - b) / abs(a) if a != 0 else math.inf


def _row(cfg: SweepConfig, value: float, body: Callable[[float, float], dict]) -> dict:
    gamma, lam = cfg.point(value)
    row = {"gamma": gamma, "lambda": lam, "alpha": cfg.alpha, "error": ""}
    try:
        row.update(body(gamma, lam))
    except ROW_ERRORS as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_theory_sweep(cfg: SweepConfig) -> list[dict]:
    return [_row(cfg, v, lambda g, l: _theory_cols(cfg, g, l)) for v in cfg.axis_values]


def run_simulate(cfg: SweepConfig) -> list[dict]:
    return [_row(cfg, v, lambda g, l: _emp_cols(cfg, g, l)) for v in cfg.axis_values]


def run_compare(cfg: SweepConfig) -> list[dict]:
    def body(g, l):
        out = _theory_cols(cfg, g, l)
        out.update(_emp_cols(cfg, g, l))
        for key in ("train", "gen", "nonzero"):
            out[f"relative_gap_{key}"] = _rel(out[f"{key}_theory"], out[f"{key}_emp"])
        return out

    return [_row(cfg, v, body) for v in cfg.axis_values]


def run_universality(cfg: SweepConfig) -> list[dict]:
    def body(g, l):
        out = {}
        for kind in ("nonlinear", "surrogate"):
            agg = run_trials(_experiment(cfg, g, l), kind, threads=cfg.threads)
            for key in ("train", "gen", "nonzero"):
                out[f"{key}_{kind}"] = agg.means[key]
                out[f"{key}_{kind}_se"] = agg.std_errors[key]
        for key in ("train", "gen", "nonzero"):
            se = math.hypot(out[f"{key}_nonlinear_se"], out[f"{key}_surrogate_se"])
            diff = out[f"{key}_nonlinear"] - out[f"{key}_surrogate"]
            out[f"z_{key}"] = diff / se if se > 0 else (0.0 if diff == 0 else math.inf)
        return out

    return [_row(cfg, v, body) for v in cfg.axis_values]


def run_sparsity_sweep(cfg: SweepConfig) -> list[dict]:
    def body(g, l):
        th = _theory_cols(cfg, g, l)
        out = {
            "nonzero_over_m": th["nonzero_theory"],
            "nonzero_over_n": th["nonzero_theory"] * g,
            "gen_theory": th["gen_theory"],
        }
        if cfg.empirical:
            ex = _experiment(cfg, g, l)
            agg = run_trials(ex, "nonlinear", threads=cfg.threads)
            ratio = ex.m / ex.n
            out["nonzero_over_m_emp"] = agg.means["nonzero"]
            out["nonzero_over_m_se"] = agg.std_errors["nonzero"]
            out["nonzero_over_n_emp"] = agg.means["nonzero"] * ratio
            out["nonzero_over_n_se"] = agg.std_errors["nonzero"] * ratio
        return out

    return [_row(cfg, v, body) for v in cfg.axis_values]


RUNNERS = {
    "theory": run_theory_sweep,
    "simulate": run_simulate,
    "compare": run_compare,
    "universality": run_universality,
    "sparsity": run_sparsity_sweep,
}


def format_number(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, int)) and not isinstance(v, float):
        return str(int(v))
    return format(float(v), ".17g")


def render(rows: Sequence[dict], mode: str, fmt: str) -> str:
    cols = COLUMNS[mode]
    if fmt == "jsonl":
        lines = []
        for r in rows:
            rec = {}
            for c in cols:
                v = r.get(c)
                if isinstance(v, float) and not math.isfinite(v):
                    v = format_number(v)
                rec[c] = v
            lines.append(json.dumps(rec))
        return "".join(line + "\n" for line in lines)
    out = [",".join(cols)]
    for r in rows:
        cells = []
        for c in cols:
            s = format_number(r.get(c))
            if any(ch in s for ch in ',"\n'):
                s = '"' + s.replace('"', '""') + '"'
            cells.append(s)
        out.append(",".join(cells))
    return "\n".join(out) + "\n"


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfcurves", description="Asymptotic and simulated learning curves of random-feature regression."
    )
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", help="JSON sweep configuration")
        p.add_argument("--out", dest="output_path", help="output file (default: stdout)")
        p.add_argument("--format", choices=("csv", "jsonl"))
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--sweep_axis", "--sweep-axis", choices=AXES)
        p.add_argument("--axis_values", "--axis-values", type=_floats, help="comma-separated")
        for name in ("gamma", "lam", "alpha", "delta", "sigma_eps2", "zero_threshold_scale"):
            flags = [f"--{name}"]
            if "_" in name:
                flags.append(f"--{name.replace('_', '-')}")
            p.add_argument(*flags, type=float)
        p.add_argument("--lambda", dest="lam", type=float, help=argparse.SUPPRESS)
        p.add_argument("--activation", choices=("tanh", "erf", "identity"))
        p.add_argument("--signal", type=json.loads, help='JSON list of [value, weight] pairs')
        p.add_argument("--total", type=int)
        p.add_argument("--test_size", "--test-size", type=int)
        p.add_argument("--empirical", type=_parse_bool)
        for key, typ in (
            ("grid_points", int),
            ("shrink", float),
            ("param_tol", float),
            ("grad_tol", float),
            ("max_rounds", int),
            ("quad_order", int),
        ):
            p.add_argument(f"--{key}", f"--{key.replace('_', '-')}", type=typ)
    return parser


SOLVER_KEYS = ("grid_points", "shrink", "param_tol", "grad_tol", "max_rounds", "quad_order")


def config_from_args(args: argparse.Namespace, environ=os.environ) -> SweepConfig:
    data = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = json.loads(fh.read())
    data["mode"] = args.mode
    solver = dict(SolverOptions().to_dict(), **data.get("solver", {}))
    for key, value in vars(args).items():
        if value is None or key in ("config", "mode"):
            continue
        if key in SOLVER_KEYS:
            solver[key] = value
        else:
            data[key] = value
    data["solver"] = solver
    if args.threads is None and "threads" not in data and environ.get("RFCURVES_THREADS"):
        data["threads"] = int(environ["RFCURVES_THREADS"])
    return SweepConfig.from_json(json.dumps(data))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"rfcurves: {exc}", file=sys.stderr)
        return 2
    rows = RUNNERS[cfg.mode](cfg)
    text = render(rows, cfg.mode, cfg.format)
    if cfg.output_path:
        with open(cfg.output_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    failed = sum(1 for r in rows if r.get("error"))
    if failed:
        print(f"rfcurves: {failed} row(s) failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

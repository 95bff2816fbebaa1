"""Finite-size random-feature experiments.

Data follow ``z ~ N(0, I_d)``, features ``x_j = act(<w_j, z> / sqrt(d))`` with a
fixed Gaussian ``W`` and labels ``y = <x, theta*> / sqrt(m) + eps``. The
Gaussian surrogate replaces the features by ``rho1 <w_j, z> / sqrt(d) + rho* g_j``.
Estimators minimize

    (1/(2n)) ||y - X theta / sqrt(m)||^2 + (lam/m) ||theta||_1 + (alpha/(2m)) ||theta||^2.
"""
from __future__ import annotations

import json
import math
import pickle
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import special

from .numerics import gauss_hermite_standard_normal
from .regularizers import (
    RegularizerSpec,
    SignalSpec,
    elastic_net_params,
    regularizer_value,
    soft_threshold,
)

__all__ = [
    "ExperimentConfig",
    "Dataset",
    "EmpiricalAggregate",
    "IllPosedProblem",
    "SolverNonConvergence",
    "AggregateFailure",
    "resolve_activation",
    "activation_constants",
    "sizes_from_ratio",
    "generate_dataset",
    "surrogate_features",
    "fit_elastic_net",
    "fit_elastic_net_cd",
    "elastic_net_objective",
    "empirical_train_error",
    "empirical_gen_error",
    "empirical_nonzero_fraction",
    "run_trial",
    "run_trials",
]

Activation = Union[str, Callable[[np.ndarray], np.ndarray]]

_NAMED = {
    "tanh": np.tanh,
    "erf": special.erf,
    "identity": lambda x: np.asarray(x, dtype=float),
}


class IllPosedProblem(ValueError):
    """Unregularized least squares with more features than samples."""


class SolverNonConvergence(RuntimeError):
    def __init__(self, message: str, residual: float, theta: np.ndarray):
        super().__init__(message)
        self.residual = residual
        self.theta = theta


class AggregateFailure(RuntimeError):
    """Too many failed trials to report an aggregate."""


def resolve_activation(activation: Activation) -> Callable[[np.ndarray], np.ndarray]:
    if callable(activation):
        return activation
    try:
        return _NAMED[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}; expected one of {sorted(_NAMED)}")


def _check_odd(fn, label):
    x = np.linspace(-6.0, 6.0, 241)
    if np.max(np.abs(fn(x) + fn(-x))) > 1e-10 * (1.0 + np.max(np.abs(fn(x)))):
        raise ValueError(f"activation {label!r} is not odd")


def activation_constants(activation: Activation, quad_order: int = 200) -> tuple[float, float]:
    """Linear and residual Hermite coefficients ``(rho1, rho_star**2)``."""
    fn = resolve_activation(activation)
    _check_odd(fn, activation)
    rule = gauss_hermite_standard_normal(quad_order)
    a = rule.nodes
    s = fn(a)
    rho1 = float(np.dot(rule.weights, a * s))
    rs2 = float(np.dot(rule.weights, s * s)) - rho1 * rho1
    if rs2 < -1e-12:
        raise ArithmeticError(f"negative residual variance {rs2!r}")
    return rho1, max(rs2, 0.0)


def sizes_from_ratio(gamma: float, delta: float, total: int = 1000) -> tuple[int, int, int]:
    """``(n, m, d)`` with ``n + m = total``, ``m/n ~ gamma`` and ``m/d ~ delta``."""
    m = int(round(total * gamma / (1.0 + gamma)))
    n = total - m
    d = max(1, int(round(m / delta)))
    return n, m, d


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    m: int
    d: int
    sigma_eps2: float
    reg: RegularizerSpec
    signal: SignalSpec
    activation: Activation = "tanh"
    seed: int = 0
    trials: int = 20
    test_size: Optional[int] = None
    zero_threshold_scale: float = 0.01
    gen_mode: str = "auto"
    tol: float = 1e-9
    max_iter: int = 50000

    def __post_init__(self):
        for name in ("n", "m", "d", "trials"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.sigma_eps2 < 0:
            raise ValueError("sigma_eps2 must be non-negative")
        if self.test_size is not None and self.test_size < 1:
            raise ValueError("test_size must be positive")
        if self.gen_mode not in ("auto", "test_set", "surrogate_exact"):
            raise ValueError(f"unknown gen_mode {self.gen_mode!r}")
        if elastic_net_params(self.reg) is None:
            raise ValueError("the simulator fits elastic-net family regularizers only")
        _check_odd(resolve_activation(self.activation), self.activation)

    @classmethod
    def from_ratios(cls, gamma: float, delta: float = 1.0, total: int = 1000, **kw) -> "ExperimentConfig":
        n, m, d = sizes_from_ratio(gamma, delta, total)
        return cls(n=n, m=m, d=d, **kw)

    @property
    def gamma(self) -> float:
        return self.m / self.n

    @property
    def eta(self) -> float:
        return self.n / self.d

    @property
    def delta(self) -> float:
        return self.m / self.d

    @property
    def effective_test_size(self) -> int:
        return self.test_size if self.test_size is not None else 10 * self.n


@dataclass(frozen=True)
class Dataset:
    W: np.ndarray
    Z: np.ndarray
    X: np.ndarray
    y: np.ndarray
    theta_star: np.ndarray
    eps: np.ndarray
    kind: str = "nonlinear"
    trial_index: int = 0


@dataclass(frozen=True)
class EmpiricalAggregate:
    means: dict
    std_errors: dict
    trials: int
    failures: int
    flags: tuple = ()
    records: tuple = field(default=(), repr=False)


def _theta_star(signal: SignalSpec, m: int) -> np.ndarray:
    out = np.empty(m)
    start = 0
    for k, (v, w) in enumerate(signal.atoms):
        stop = m if k == len(signal.atoms) - 1 else min(m, start + int(math.ceil(m * w)))
        out[start:stop] = v
        start = stop
    return out


def _trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(seed + trial_index)


def _test_rng(seed: int, trial_index: int) -> np.random.Generator:
    return np.random.default_rng([seed + trial_index, 1])


def surrogate_features(W, Z, rho1: float, rho_star2: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian-equivalent features ``rho1 Z W^T / sqrt(d) + rho* G``."""
    W = np.asarray(W, dtype=float)
    Z = np.asarray(Z, dtype=float)
    d = W.shape[1]
    if Z.shape[1] != d:
        raise ValueError("W and Z must share their second dimension")
    lin = (Z @ W.T) / math.sqrt(d)
    g = rng.standard_normal((Z.shape[0], W.shape[0]))
    return rho1 * lin + math.sqrt(rho_star2) * g


def generate_dataset(cfg: ExperimentConfig, trial_index: int, feature_kind: str = "nonlinear") -> Dataset:
    """Training data for one trial, reproducible from ``(cfg.seed, trial_index)``."""
    rng = _trial_rng(cfg.seed, trial_index)
    W = rng.standard_normal((cfg.m, cfg.d))
    Z = rng.standard_normal((cfg.n, cfg.d))
    eps = rng.standard_normal(cfg.n) * math.sqrt(cfg.sigma_eps2)
    if feature_kind == "nonlinear":
        X = resolve_activation(cfg.activation)((Z @ W.T) / math.sqrt(cfg.d))
    elif feature_kind == "surrogate":
        rho1, rs2 = activation_constants(cfg.activation)
        X = surrogate_features(W, Z, rho1, rs2, rng)
    else:
        raise ValueError(f"unknown feature kind {feature_kind!r}")
    theta = _theta_star(cfg.signal, cfg.m)
    y = X @ theta / math.sqrt(cfg.m) + eps
    return Dataset(W, Z, X, y, theta, eps, feature_kind, trial_index)


# --------------------------------------------------------------------------- solvers


def elastic_net_objective(theta, X, y, lam: float, alpha: float) -> float:
    n, m = X.shape
    r = y - X @ theta / math.sqrt(m)
    return float(
        r @ r / (2.0 * n) + lam / m * np.sum(np.abs(theta)) + alpha / (2.0 * m) * theta @ theta
    )


def _spectral_norm_sq(A: np.ndarray, iters: int = 100, tol: float = 1e-10) -> float:
    v = np.random.default_rng(0).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return est


def _validate_fit(X, y, lam, alpha):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be n x m and y an n-vector")
    if lam < 0 or alpha < 0:
        raise ValueError("lam and alpha must be non-negative")
    n, m = X.shape
    if lam == 0 and alpha == 0 and n < m:
        raise IllPosedProblem("unregularized problem with n < m has no unique minimizer")
    return X, y


def fit_elastic_net(
    X,
    y,
    lam: float,
    alpha: float,
    tol: float = 1e-9,
    max_iter: int = 50000,
    return_info: bool = False,
):
    """FISTA with backtracking and gradient-based adaptive restart.

    Stops when the proximal-gradient fixed-point residual
    ``||theta - prox(theta - grad / L)||_inf`` falls to ``tol``. With
    ``return_info`` returns ``(theta, iterations, residual)``.
    """
    X, y = _validate_fit(X, y, lam, alpha)
    n, m = X.shape
    sm = math.sqrt(m)
    L = _spectral_norm_sq(X) / (n * m) + alpha / m
    if L == 0.0:
        L = 1.0
    thresh = lam / m

    def grad(th):
        return -(X.T @ (y - X @ th / sm)) / (n * sm) + alpha / m * th

    def smooth(th):
        r = y - X @ th / sm
        return r @ r / (2.0 * n) + alpha / (2.0 * m) * th @ th

    x = np.zeros(m)
    z = x.copy()
    tk = 1.0
    res = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        gz = grad(z)
        fz = smooth(z)
        while True:
            x_new = soft_threshold(z - gz / L, thresh / L)
            diff = x_new - z
            if smooth(x_new) <= fz + gz @ diff + 0.5 * L * diff @ diff + 1e-15 * abs(fz):
                break
            L *= 2.0
        res = float(np.max(np.abs(diff))) if it > 1 else math.inf
        if np.dot(z - x_new, x_new - x) > 0:
            tk = 1.0
            z = x_new.copy()
        else:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
            z = x_new + ((tk - 1.0) / t_next) * (x_new - x)
            tk = t_next
        x = x_new
        if it % 10 == 0 or res <= tol:
            fixed = soft_threshold(x - grad(x) / L, thresh / L)
            res = float(np.max(np.abs(fixed - x)))
            if res <= tol:
                break
    else:
        raise SolverNonConvergence(f"FISTA stopped after {max_iter} iterations", res, x)
    if return_info:
        return x, it, res
    return x


def fit_elastic_net_cd(
    X, y, lam: float, alpha: float, tol: float = 1e-10, max_sweeps: int = 1000000
) -> np.ndarray:
    """Cyclic proximal coordinate descent for the same objective, in Gram form.

    Stops when no coordinate moves by more than ``tol`` (relative to the
    largest coordinate) during a full sweep.
    """
    X, y = _validate_fit(X, y, lam, alpha)
    n, m = X.shape
    A = X / math.sqrt(m)
    H = (A.T @ A) / n
    grad = -(A.T @ y) / n
    diag = np.diag(H).copy()
    denom = diag + alpha / m
    theta = np.zeros(m)
    thresh = lam / m
    rows = list(H)  # H is symmetric; contiguous rows are faster to update with
    diag_l, denom_l = diag.tolist(), denom.tolist()
    th = [0.0] * m
    for _ in range(max_sweeps):
        biggest = 0.0
        for j in range(m):
            dj = denom_l[j]
            if dj == 0.0:
                continue
            old = th[j]
            rho = diag_l[j] * old - float(grad[j])
            a = abs(rho) - thresh
            new = math.copysign(a, rho) / dj if a > 0.0 else 0.0
            if new != old:
                grad += rows[j] * (new - old)
                th[j] = new
                step = abs(new - old)
                if step > biggest:
                    biggest = step
        if biggest <= tol * max(1.0, max(map(abs, th))):
            theta[:] = th
            return theta
    theta[:] = th
    raise SolverNonConvergence("coordinate descent did not converge", biggest, theta)


# --------------------------------------------------------------------------- metrics


def empirical_train_error(theta_hat, X, y, reg: RegularizerSpec) -> float:
    n, m = X.shape
    r = y - X @ theta_hat / math.sqrt(m)
    return float(r @ r / (2.0 * n) + np.sum(regularizer_value(reg, theta_hat)) / m)


def empirical_gen_error(
    theta_hat,
    theta_star,
    cfg: ExperimentConfig,
    dataset: Dataset,
    mode: str = "test_set",
) -> tuple[float, float]:
    """``(estimate, standard_error)`` of the squared prediction error on fresh data.

    ``test_set`` draws ``cfg.effective_test_size`` new inputs and noise;
    ``surrogate_exact`` uses the exact feature covariance of the Gaussian
    surrogate and reports a zero standard error.
    """
    e = np.asarray(theta_hat) - np.asarray(theta_star)
    m, d = cfg.m, cfg.d
    if mode == "surrogate_exact":
        if dataset.kind != "surrogate":
            raise ValueError("surrogate_exact needs a surrogate dataset")
        rho1, rs2 = activation_constants(cfg.activation)
        proj = dataset.W.T @ e
        quad = rho1 * rho1 / d * proj @ proj + rs2 * e @ e
        return float(cfg.sigma_eps2 + quad / m), 0.0
    if mode != "test_set":
        raise ValueError(f"unknown mode {mode!r}")
    size = cfg.effective_test_size
    if size < 100:
        warnings.warn(f"test_size={size} is small; the standard error is unreliable", stacklevel=2)
    rng = _test_rng(cfg.seed, dataset.trial_index)
    Zt = rng.standard_normal((size, d))
    eps = rng.standard_normal(size) * math.sqrt(cfg.sigma_eps2)
    if dataset.kind == "nonlinear":
        Xt = resolve_activation(cfg.activation)((Zt @ dataset.W.T) / math.sqrt(d))
    else:
        rho1, rs2 = activation_constants(cfg.activation)
        Xt = surrogate_features(dataset.W, Zt, rho1, rs2, rng)
    err = (Xt @ e / math.sqrt(m) - eps) ** 2
    return float(err.mean()), float(err.std(ddof=1) / math.sqrt(size))


def empirical_nonzero_fraction(theta_hat, m: int, zero_threshold_scale: float = 0.01) -> float:
    if m <= 0:
        raise ValueError("m must be positive")
    return float(np.mean(np.abs(theta_hat) >= zero_threshold_scale / math.sqrt(m)))


# --------------------------------------------------------------------------- trials


def run_trial(cfg: ExperimentConfig, trial_index: int, feature_kind: str = "nonlinear") -> dict:
    ds = generate_dataset(cfg, trial_index, feature_kind)
    lam, alpha = elastic_net_params(cfg.reg)
    theta, iters, _ = fit_elastic_net(
        ds.X, ds.y, lam, alpha, tol=cfg.tol, max_iter=cfg.max_iter, return_info=True
    )
    mode = cfg.gen_mode
    if mode == "auto":
        mode = "surrogate_exact" if feature_kind == "surrogate" else "test_set"
    gen, gen_se = empirical_gen_error(theta, ds.theta_star, cfg, ds, mode)
    return {
        "trial": trial_index,
        "train": empirical_train_error(theta, ds.X, ds.y, cfg.reg),
        "gen": gen,
        "gen_se": gen_se,
        "nonzero": empirical_nonzero_fraction(theta, cfg.m, cfg.zero_threshold_scale),
        "iters": int(iters),
        "seed": cfg.seed + trial_index,
    }


def _safe_trial(args):
    cfg, k, kind = args
    try:
        return run_trial(cfg, k, kind)
    except (SolverNonConvergence, ArithmeticError, np.linalg.LinAlgError) as exc:
        return {"trial": k, "seed": cfg.seed + k, "error": f"{type(exc).__name__}: {exc}"}


def _picklable(obj) -> bool:
    try:
        pickle.dumps(obj)
        return True
    except Exception:
        return False


def run_trials(
    cfg: ExperimentConfig,
    feature_kind: str = "nonlinear",
    threads: int = 1,
    dump_path: Optional[str] = None,
) -> EmpiricalAggregate:
    """Run ``cfg.trials`` independent trials and aggregate mean and standard error.

    Trials run in worker processes when ``threads > 1``; results are
    collected in trial order, so the aggregate does not depend on the
    number of workers.
    """
    if feature_kind not in ("nonlinear", "surrogate"):
        raise ValueError(f"unknown feature kind {feature_kind!r}")
    jobs = [(cfg, k, feature_kind) for k in range(cfg.trials)]
    if threads > 1 and cfg.trials > 1 and _picklable(cfg):
        with ProcessPoolExecutor(max_workers=min(threads, cfg.trials)) as pool:
            records = list(pool.map(_safe_trial, jobs))
    else:
        records = [_safe_trial(j) for j in jobs]
    if dump_path is not None:
        with open(dump_path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    ok = [r for r in records if "error" not in r]
    failures = len(records) - len(ok)
    if failures > 0.2 * len(records) or not ok:
        raise AggregateFailure(f"{failures} of {len(records)} trials failed")
    flags = []
    if failures:
        flags.append(f"failed_trials={failures}")
    means, ses = {}, {}
    for key in ("train", "gen", "nonzero"):
        vals = np.array([r[key] for r in ok])
        means[key] = float(vals.mean())
        ses[key] = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    if len(ok) == 1:
        flags.append("single_trial_se_undefined")
    return EmpiricalAggregate(means, ses, len(ok), failures, tuple(flags), tuple(records))

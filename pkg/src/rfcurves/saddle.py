"""The four-variable scalar saddle problem.

``P(tau1, tau2) = max_beta min_q max_xi min_t psi(beta, q, xi, t)`` with all
four variables positive. ``psi`` combines a Gaussian-averaged Moreau envelope
of the (possibly perturbed) regularizer with an algebraic part; see
:func:`psi` for the exact expression.

The solver runs a nested refining grid search on log-spaced boxes and then
polishes the incumbent by solving the stationarity equations in log
coordinates with the analytic gradient. If the polish fails or wanders off,
a nested bounded-Brent search inside the final grid box is used instead.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import optimize

from .numerics import minimize_1d
from .regularizers import (
    RegularizerSpec,
    SignalSpec,
    TestFunction,
    perturbed,
    reduced_envelope,
    strong_convexity,
)

__all__ = [
    "ProblemSpec",
    "SaddlePoint",
    "SolverOptions",
    "SaddleNonConvergence",
    "UnboundedDirection",
    "tau1_star",
    "tau2_star",
    "coupling_constants",
    "psi",
    "psi_gradient",
    "psi_tau1_partial",
    "solve_saddle",
    "stationarity_residual",
]

COORDS = ("beta", "q", "xi", "t")


class SaddleNonConvergence(RuntimeError):
    """Raised when the solver cannot certify a stationary point."""

    def __init__(self, message: str, best: "SaddlePoint"):
        super().__init__(message)
        self.best = best
        self.residual = best.residual


class UnboundedDirection(RuntimeError):
    """An optimizer kept hitting a box edge after the expansion cap."""


@dataclass(frozen=True)
class ProblemSpec:
    """Asymptotic problem instance.

    ``gamma = m/n``, ``eta = n/d`` and ``delta = m/d`` must satisfy
    ``delta = gamma * eta``. Perturbations ``tau1`` (generalization) and
    ``tau2`` (test function ``test_fn``) are restricted to the range in which
    the perturbed objective stays strongly convex; without strong convexity
    only zero perturbations are accepted.
    """

    gamma: float
    eta: float
    delta: float
    sigma_eps2: float
    rho1: float
    rho_star2: float
    reg: RegularizerSpec
    signal: SignalSpec
    tau1: float = 0.0
    tau2: float = 0.0
    test_fn: Optional[TestFunction] = None

    def __post_init__(self):
        for name in ("gamma", "eta", "delta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive, got {v!r}")
        if abs(self.delta - self.gamma * self.eta) > 1e-12 * max(1.0, self.delta):
            raise ValueError("delta must equal gamma * eta")
        if not self.sigma_eps2 >= 0:
            raise ValueError("sigma_eps2 must be non-negative")
        if not self.rho_star2 >= 0:
            raise ValueError("rho_star2 must be non-negative")
        if self.rho1**2 + self.rho_star2 <= 0:
            raise ValueError("rho1**2 + rho_star2 must be positive")
        if self.tau2 != 0 and self.test_fn is None:
            raise ValueError("tau2 != 0 requires a test function")
        mu = strong_convexity(self.reg)
        if mu == 0:
            if self.tau1 != 0 or self.tau2 != 0:
                raise ValueError("perturbations require a strongly convex regularizer")
        else:
            if abs(self.tau1) > tau1_star(self):
                raise ValueError(f"|tau1| exceeds its admissible bound {tau1_star(self):.3e}")
            if abs(self.tau2) > tau2_star(self):
                raise ValueError(f"|tau2| exceeds its admissible bound {tau2_star(self):.3e}")

    @classmethod
    def from_ratios(
        cls,
        gamma: float,
        delta: float,
        sigma_eps2: float,
        rho1: float,
        rho_star2: float,
        reg: RegularizerSpec,
        signal: SignalSpec,
        **kw,
    ) -> "ProblemSpec":
        return cls(gamma, delta / gamma, delta, sigma_eps2, rho1, rho_star2, reg, signal, **kw)

    @property
    def mu(self) -> float:
        return strong_convexity(self.reg)

    def effective_regularizer(self, tau2: Optional[float] = None) -> RegularizerSpec:
        tau2 = self.tau2 if tau2 is None else tau2
        if tau2 == 0:
            return self.reg
        return perturbed(self.reg, tau2, self.test_fn)


def tau1_star(spec: ProblemSpec) -> float:
    """Largest admissible ``|tau1|``; zero without strong convexity."""
    rho = spec.rho1**2 * (1.0 + 2.0 * math.sqrt(spec.delta)) ** 2 + spec.rho_star2
    return (spec.mu / 8.0) / rho


def tau2_star(spec: ProblemSpec) -> float:
    if spec.test_fn is None or spec.test_fn.curvature == 0:
        return math.inf if spec.mu > 0 else 0.0
    return spec.mu / (4.0 * spec.test_fn.curvature)


@dataclass(frozen=True)
class SolverOptions:
    grid_points: int = 15
    shrink: float = 3.0
    param_tol: float = 1e-7
    grad_tol: float = 1e-6
    max_rounds: int = 60
    quad_order: int = 200
    coarse_width: float = 0.5
    max_expansions: int = 12

    def __post_init__(self):
        if self.grid_points < 3:
            raise ValueError("grid_points must be at least 3")
        if not self.shrink > 1:
            raise ValueError("shrink must exceed 1")
        if not (self.param_tol > 0 and self.grad_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be positive")

    def to_dict(self) -> dict:
        return {
            "grid_points": self.grid_points,
            "shrink": self.shrink,
            "param_tol": self.param_tol,
            "grad_tol": self.grad_tol,
            "max_rounds": self.max_rounds,
            "quad_order": self.quad_order,
        }


@dataclass(frozen=True)
class SaddlePoint:
    beta: float
    q: float
    xi: float
    t: float
    c1: float
    c2: float
    value: float
    residual: float
    flags: tuple = field(default=())

    @property
    def coords(self) -> np.ndarray:
        return np.array([self.beta, self.q, self.xi, self.t])


def _coupling(beta, q, xi, t, spec: ProblemSpec, tau1: float):
    u = beta + 2.0 * q * tau1
    r1 = spec.rho1**2
    c1 = r1 * u * u * xi / (2.0 * q * q * t) + spec.rho_star2 * u / (2.0 * q)
    c2 = np.sqrt(r1 * u * u * xi * xi * spec.eta / (q * q) + beta * beta * spec.rho_star2)
    return u, c1, c2


def coupling_constants(beta, q, xi, t, spec: ProblemSpec) -> tuple[float, float]:
    """The two constants that couple the envelope term to the saddle variables."""
    for name, v in zip(COORDS, (beta, q, xi, t)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v!r}")
    if beta + 2.0 * q * spec.tau1 <= 0:
        raise ValueError("beta + 2*q*tau1 must be positive; the perturbation is too large")
    _, c1, c2 = _coupling(beta, q, xi, t, spec, spec.tau1)
    return float(c1), float(c2)


def _algebraic(beta, q, xi, t, u, spec: ProblemSpec):
    eta = spec.eta
    return (
        0.5 * xi * t
        + 0.5 * beta * q
        + beta * spec.sigma_eps2 / (2.0 * q)
        + xi * beta * beta / (2.0 * t * eta)
        - u * xi * xi / (2.0 * q)
        - q * beta * beta / (2.0 * u * eta)
        - 0.5 * beta * beta
    )


def _psi_value(beta, q, xi, t, spec, tau1, tau2, method, quad_order):
    u, c1, c2 = _coupling(beta, q, xi, t, spec, tau1)
    reg = spec.effective_regularizer(tau2)
    G, _, _ = reduced_envelope(reg, c1, c2, spec.gamma, spec.signal, method, quad_order)
    return G + _algebraic(beta, q, xi, t, u, spec)


def psi(
    beta: float,
    q: float,
    xi: float,
    t: float,
    spec: ProblemSpec,
    quad_order: int = 200,
    method: str = "auto",
    tau1: Optional[float] = None,
    tau2: Optional[float] = None,
) -> float:
    """Saddle objective.

    With ``u = beta + 2 q tau1``::

        psi = E[M(theta* - (c2 sqrt(gamma) / (2 c1)) phi)] - c2**2 gamma / (4 c1)
              + xi t / 2 + beta q / 2 + beta sigma^2 / (2 q) + xi beta**2 / (2 t eta)
              - u xi**2 / (2 q) - q beta**2 / (2 u eta) - beta**2 / 2

    where ``M`` is the Moreau envelope of ``r + tau2 h`` with step ``1/(2 c1)``
    and ``c1, c2`` come from :func:`coupling_constants`. ``tau1`` and
    ``tau2`` default to the values stored in ``spec``; passing them here
    bypasses the admissibility check, which finite differences rely on.
    """
    tau1 = spec.tau1 if tau1 is None else tau1
    tau2 = spec.tau2 if tau2 is None else tau2
    for name, v in zip(COORDS, (beta, q, xi, t)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v!r}")
    if beta + 2.0 * q * tau1 <= 0:
        raise ValueError("beta + 2*q*tau1 must be positive; the perturbation is too large")
    u, c1, c2 = _coupling(beta, q, xi, t, spec, tau1)
    reg = spec.effective_regularizer(tau2)
    G, _, _ = reduced_envelope(reg, c1, c2, spec.gamma, spec.signal, method, quad_order)
    terms = {
        "c1": c1,
        "c2": c2,
        "envelope": G,
        "algebraic": _algebraic(beta, q, xi, t, u, spec),
    }
    for name, v in terms.items():
        if not np.isfinite(v):
            raise FloatingPointError(f"psi: non-finite {name} term at {(beta, q, xi, t)}")
    return float(G + terms["algebraic"])


def _gradient(beta, q, xi, t, spec, tau1, tau2, quad_order=200, method="auto"):
    """Analytic gradient of psi, chain rule through the coupling constants."""
    r1, rs2, eta = spec.rho1**2, spec.rho_star2, spec.eta
    u, c1, c2 = _coupling(beta, q, xi, t, spec, tau1)
    reg = spec.effective_regularizer(tau2)
    G, Gc1, Gc2 = reduced_envelope(reg, c1, c2, spec.gamma, spec.signal, method, quad_order)

    c1_b = r1 * xi * u / (t * q * q) + rs2 / (2.0 * q)
    c1_q = -r1 * xi * u * beta / (t * q**3) - rs2 * beta / (2.0 * q * q)
    c1_x = r1 * u * u / (2.0 * q * q * t)
    c1_t = -r1 * u * u * xi / (2.0 * q * q * t * t)
    c2_b = (r1 * u * xi * xi * eta / (q * q) + beta * rs2) / c2
    c2_q = -r1 * xi * xi * eta * u * beta / (q**3 * c2)
    c2_x = r1 * u * u * xi * eta / (q * q * c2)

    s2 = spec.sigma_eps2
    L_b = (
        0.5 * q
        + s2 / (2.0 * q)
        + xi * beta / (t * eta)
        - xi * xi / (2.0 * q)
        - q * beta / (u * eta)
        + q * beta * beta / (2.0 * u * u * eta)
        - beta
    )
    L_q = 0.5 * beta - beta * s2 / (2.0 * q * q) + xi * xi * beta / (2.0 * q * q) - beta**3 / (
        2.0 * eta * u * u
    )
    L_x = 0.5 * t + beta * beta / (2.0 * t * eta) - u * xi / q
    L_t = 0.5 * xi - xi * beta * beta / (2.0 * t * t * eta)
    return np.array(
        [
            Gc1 * c1_b + Gc2 * c2_b + L_b,
            Gc1 * c1_q + Gc2 * c2_q + L_q,
            Gc1 * c1_x + Gc2 * c2_x + L_x,
            Gc1 * c1_t + L_t,
        ]
    )


def psi_gradient(beta, q, xi, t, spec: ProblemSpec, quad_order: int = 200, method: str = "auto"):
    """Analytic gradient of :func:`psi` with respect to ``(beta, q, xi, t)``."""
    return _gradient(beta, q, xi, t, spec, spec.tau1, spec.tau2, quad_order, method)


def psi_tau1_partial(beta, q, xi, t, spec: ProblemSpec, tau1: float = 0.0, quad_order: int = 200):
    """Analytic partial derivative of psi in ``tau1`` at fixed saddle variables."""
    r1, eta = spec.rho1**2, spec.eta
    u, c1, c2 = _coupling(beta, q, xi, t, spec, tau1)
    reg = spec.effective_regularizer()
    _, Gc1, Gc2 = reduced_envelope(reg, c1, c2, spec.gamma, spec.signal, "auto", quad_order)
    c1_tau = 2.0 * q * (r1 * xi * u / (t * q * q) + spec.rho_star2 / (2.0 * q))
    c2_tau = 2.0 * r1 * xi * xi * eta * u / (q * c2)
    L_tau = -xi * xi + q * q * beta * beta / (u * u * eta)
    return float(Gc1 * c1_tau + Gc2 * c2_tau + L_tau)


def _fd_gradient(x, spec, tau1, tau2, quad_order):
    f0 = _psi_value(*x, spec, tau1, tau2, "auto", quad_order)
    grad = np.empty(4)
    for i in range(4):
        h = 1e-6 * x[i]
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fp = _psi_value(*xp, spec, tau1, tau2, "auto", quad_order)
        fm = _psi_value(*xm, spec, tau1, tau2, "auto", quad_order)
        grad[i] = (fp - fm) / (2.0 * h)
    return grad, f0


def stationarity_residual(pt: SaddlePoint, spec: ProblemSpec, quad_order: int = 200) -> float:
    """Max-norm of the centered finite-difference gradient of psi, scaled by ``max(1, |psi|)``.

    Each coordinate uses the relative step ``1e-6`` times that coordinate.
    """
    x = pt.coords.astype(float)
    if np.any(x <= 0):
        raise ValueError("saddle coordinates must be positive")
    grad, f0 = _fd_gradient(x, spec, spec.tau1, spec.tau2, quad_order)
    return float(np.max(np.abs(grad)) / max(1.0, abs(f0)))


# --------------------------------------------------------------------------- grid search


def _initial_box(spec: ProblemSpec) -> np.ndarray:
    """Log-space box, one ``(lo, hi)`` row per coordinate."""
    q_lo = max(math.sqrt(spec.sigma_eps2), 1e-6) * 0.5
    if spec.sigma_eps2 == 0:
        q_lo = 1e-8
    lo = np.array([1e-6, q_lo, 1e-6, 1e-6])
    hi = np.maximum(10.0, 20.0 * lo)
    return np.log(np.stack([lo, hi], axis=1))


def _grid_values(axes, spec, tau1, tau2, quad_order):
    B, Q, X, T = np.meshgrid(*axes, indexing="ij")
    reg = spec.effective_regularizer(tau2)
    with np.errstate(all="ignore"):
        u, c1, c2 = _coupling(B, Q, X, T, spec, tau1)
        G, _, _ = reduced_envelope(reg, c1, c2, spec.gamma, spec.signal, "auto", quad_order)
        vals = G + _algebraic(B, Q, X, T, u, spec)
    # Non-finite cells are treated as unattractive for whichever player owns the axis.
    return np.where(np.isfinite(vals), vals, np.nan)


def _distrust_edges(reduced, arg, n, axis):
    """Blank out values whose inner optimizer sits on a box edge.

    Such values are truncated by the box and would mislead the next player;
    they are kept only where a whole slice along ``axis`` is affected.
    """
    bad = (arg == 0) | (arg == n - 1)
    out = np.where(bad, np.nan, reduced)
    allbad = np.all(np.isnan(out), axis=axis, keepdims=True)
    return np.where(allbad, reduced, out)


def _nested_argopt(vals):
    """Indices of the max-min-max-min incumbent on a 4-D grid."""
    n = vals.shape[0]
    inf = np.inf
    P = np.where(np.isfinite(vals), vals, inf)
    it_arg = np.argmin(P, axis=3)
    Vt = _distrust_edges(np.min(P, axis=3), it_arg, n, 2)
    P = np.where(np.isfinite(Vt), Vt, -inf)
    ix_arg = np.argmax(P, axis=2)
    Vx = _distrust_edges(np.max(P, axis=2), ix_arg, n, 1)
    P = np.where(np.isfinite(Vx), Vx, inf)
    iq_arg = np.argmin(P, axis=1)
    Vq = _distrust_edges(np.min(P, axis=1), iq_arg, n, 0)
    P = np.where(np.isfinite(Vq), Vq, -inf)
    ib = int(np.argmax(P))
    iq = int(iq_arg[ib])
    ix = int(ix_arg[ib, iq])
    it = int(it_arg[ib, iq, ix])
    return (ib, iq, ix, it), float(P[ib])


_NESTING = np.array([1.0, 2.0, 3.0, 4.0])


def _grid_search(spec, opts, tau1, tau2, box=None, stop_width=None):
    """Nested refining grid search on log-spaced boxes.

    Each round evaluates psi on the full 4-D grid, extracts the
    max-min-max-min incumbent and shrinks the boxes around it. The inner
    optima move with the outer variables, so a box is never allowed to be
    narrower than a fixed multiple (2, 3, 4 for q, xi, t) of the outermost
    one. An axis whose incumbent sits on the box edge is doubled instead;
    reaching an edge of the global box moves that bound outwards by a
    factor of two.
    """
    box = _initial_box(spec) if box is None else box.copy()
    outer = box.copy()
    stop_width = opts.coarse_width if stop_width is None else stop_width
    n = opts.grid_points
    expansions = np.zeros(4, dtype=int)
    incumbent = np.exp(box.mean(axis=1))
    rounds = 0
    log2 = math.log(2.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        while rounds < opts.max_rounds:
            rounds += 1
            axes = [np.exp(np.linspace(lo, hi, n)) for lo, hi in box]
            vals = _grid_values(axes, spec, tau1, tau2, opts.quad_order)
            if not np.isfinite(vals).any():
                raise FloatingPointError("psi is non-finite on the whole search grid")
            idx, _ = _nested_argopt(vals)
            incumbent = np.array([axes[k][i] for k, i in enumerate(idx)])
            width = box[:, 1] - box[:, 0]
            new_w = width / opts.shrink
            edge = False
            for k, i in enumerate(idx):
                if i in (0, n - 1):
                    edge = True
                    side = 0 if i == 0 else 1
                    if abs(box[k, side] - outer[k, side]) < 1e-12:
                        if expansions[k] >= opts.max_expansions:
                            raise UnboundedDirection(
                                f"{COORDS[k]} stays on the box edge after {expansions[k]} expansions"
                            )
                        expansions[k] += 1
                        outer[k, side] += log2 if side else -log2
                    new_w[k] = 2.0 * width[k]
            new_w = np.maximum(new_w, _NESTING * new_w[0])
            new_w = np.minimum(new_w, outer[:, 1] - outer[:, 0])
            c = np.log(incumbent)
            lo = np.maximum(c - new_w / 2, outer[:, 0])
            hi = np.minimum(lo + new_w, outer[:, 1])
            lo = np.maximum(hi - new_w, outer[:, 0])
            box = np.stack([lo, hi], axis=1)
            if not edge and width[0] <= stop_width:
                break
    return incumbent, box, rounds


# --------------------------------------------------------------------------- polishing


def _root_polish(x0, spec, tau1, tau2, opts):
    def F(v):
        x = np.exp(v)
        with np.errstate(all="ignore"):
            g = _gradient(*x, spec, tau1, tau2, opts.quad_order)
        if not np.all(np.isfinite(g)):
            return np.full(4, 1e6)
        return x * g

    sol = optimize.root(F, np.log(x0), method="hybr", options={"xtol": 1e-13})
    x = np.exp(sol.x)
    return x, bool(sol.success)


def _nested_brent(box, spec, tau1, tau2, opts):
    tol = 1e-10

    def val(b, q, x, t):
        return _psi_value(b, q, x, t, spec, tau1, tau2, "auto", opts.quad_order)

    lb, lq, lx, lt = box

    def best_t(b, q, x):
        lt_, v = minimize_1d(lambda s: val(b, q, x, math.exp(s)), lt[0], lt[1], tol, refine=False)
        return math.exp(lt_), v

    def best_x(b, q):
        lx_, v = minimize_1d(lambda s: -best_t(b, q, math.exp(s))[1], lx[0], lx[1], tol, refine=False)
        return math.exp(lx_), -v

    def best_q(b):
        lq_, v = minimize_1d(lambda s: best_x(b, math.exp(s))[1], lq[0], lq[1], tol, refine=False)
        return math.exp(lq_), v

    lb_, _ = minimize_1d(lambda s: -best_q(math.exp(s))[1], lb[0], lb[1], tol, refine=False)
    b = math.exp(lb_)
    q, _ = best_q(b)
    x, _ = best_x(b, q)
    t, _ = best_t(b, q, x)
    return np.array([b, q, x, t])


def _make_point(x, spec, tau1, tau2, opts, flags):
    u, c1, c2 = _coupling(*x, spec, tau1)
    value = _psi_value(*x, spec, tau1, tau2, "auto", opts.quad_order)
    grad, f0 = _fd_gradient(np.asarray(x, dtype=float), spec, tau1, tau2, opts.quad_order)
    res = float(np.max(np.abs(grad)) / max(1.0, abs(f0)))
    return SaddlePoint(
        beta=float(x[0]),
        q=float(x[1]),
        xi=float(x[2]),
        t=float(x[3]),
        c1=float(c1),
        c2=float(c2),
        value=float(value),
        residual=res,
        flags=tuple(flags),
    )


def _within(x, box, slack):
    lx = np.log(x)
    w = box[:, 1] - box[:, 0]
    return bool(np.all(lx >= box[:, 0] - slack * w - 1e-9) and np.all(lx <= box[:, 1] + slack * w + 1e-9))


def solve_saddle(
    spec: ProblemSpec,
    opts: SolverOptions = SolverOptions(),
    warm_start: Optional[SaddlePoint] = None,
) -> SaddlePoint:
    """Solve the max-min-max-min problem for ``spec``.

    A warm start skips the global grid search: the polish starts from the
    given point and, should it fail, the grid search restarts in a box of
    relative width ``1e-2`` around it.
    """
    tau1, tau2 = spec.tau1, spec.tau2
    flags = []
    if spec.sigma_eps2 == 0:
        flags.append("noiseless_q_floor")

    def polish_from(x0, box):
        x, ok = _root_polish(x0, spec, tau1, tau2, opts)
        if ok and np.all(np.isfinite(x)) and _within(x, box, 1.0):
            return x, "root"
        if spec.sigma_eps2 == 0 and np.min(x0) <= 1e-5:
            # collapsed noiseless saddle: no interior point to polish towards
            return x0, "grid"
        x = _nested_brent(box, spec, tau1, tau2, opts)
        return x, "nested_brent"

    if warm_start is not None:
        x0 = warm_start.coords
        box = np.log(np.stack([x0 * (1 - 5e-3), x0 * (1 + 5e-3)], axis=1))
        x, ok = _root_polish(x0, spec, tau1, tau2, opts)
        if ok and np.all(np.isfinite(x)) and np.all(np.abs(np.log(x / x0)) < 0.1):
            pt = _make_point(x, spec, tau1, tau2, opts, flags + ["warm_root"])
            if pt.residual <= opts.grad_tol:
                return pt
        inc, box, _ = _grid_search(spec, opts, tau1, tau2, box=box)
    else:
        inc, box, _ = _grid_search(spec, opts, tau1, tau2)

    x, how = polish_from(inc, box)
    pt = _make_point(x, spec, tau1, tau2, opts, flags + [how])
    if pt.residual > opts.grad_tol and how == "root":
        x = _nested_brent(box, spec, tau1, tau2, opts)
        pt = _make_point(x, spec, tau1, tau2, opts, flags + ["nested_brent"])
    if pt.residual > opts.grad_tol and spec.sigma_eps2 == 0 and np.min(pt.coords) <= 1e-5:
        # Noiseless interpolation: the saddle collapses onto the lower brackets.
        return replace(pt, flags=pt.flags + ("degenerate_noiseless",))
    if pt.residual > opts.grad_tol:
        raise SaddleNonConvergence(
            f"stationarity residual {pt.residual:.3e} exceeds {opts.grad_tol:.1e}", pt
        )
    return pt

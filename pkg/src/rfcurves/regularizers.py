"""Separable regularizers, their proximal maps and Gaussian-averaged Moreau envelopes.

The scalar envelope with step ``s`` is ``M(y) = min_x r(x) + (x - y)**2 / (2 s)``.
The asymptotic problem needs its average over ``y = a - (c2 sqrt(gamma) / (2 c1)) phi``
with ``phi ~ N(0, 1)`` and step ``1 / (2 c1)``; for the elastic net this
average has a closed form in terms of Gaussian tail probabilities.

Internally most code works with the reduced quantity

    G(c1, c2) = E[M(y)] - c2**2 gamma / (4 c1)
              = E[ min_x r(x) + c1 (x - a)**2 + c2 sqrt(gamma) phi (x - a) ],

which avoids cancellation when ``c1`` is small and has the simple partial
derivatives ``dG/dc1 = E[(x_hat - a)**2]`` and
``dG/dc2 = sqrt(gamma) E[phi (x_hat - a)]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .numerics import (
    QuadratureRule,
    gauss_hermite_standard_normal,
    piecewise_normal_rule,
    q_function,
    std_normal_pdf,
)

__all__ = [
    "Ridge",
    "Lasso",
    "ElasticNet",
    "CustomSeparable",
    "RegularizerSpec",
    "SignalSpec",
    "EnvelopeContext",
    "TestFunction",
    "smooth_bump",
    "soft_threshold",
    "regularizer_value",
    "strong_convexity",
    "elastic_net_params",
    "scalar_prox",
    "scalar_moreau",
    "expected_moreau",
    "expected_moreau_closed_form",
    "reduced_envelope",
    "zeta_thresholds",
    "sample_theta_hat_coordinate",
    "phi_breakpoints",
    "perturbed",
]


@dataclass(frozen=True)
class ElasticNet:
    """``r(x) = lam * |x| + alpha / 2 * x**2`` applied coordinate-wise."""

    lam: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if not (self.lam >= 0 and self.alpha >= 0):
            raise ValueError("ElasticNet requires lam >= 0 and alpha >= 0")

    @property
    def mu(self) -> float:
        return float(self.alpha)

    @property
    def label(self) -> str:
        return f"elastic_net(lam={self.lam:g}, alpha={self.alpha:g})"


@dataclass(frozen=True)
class Ridge:
    alpha: float = 0.0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("Ridge requires alpha >= 0")

    lam = 0.0

    @property
    def mu(self) -> float:
        return float(self.alpha)

    @property
    def label(self) -> str:
        return f"ridge(alpha={self.alpha:g})"


@dataclass(frozen=True)
class Lasso:
    lam: float = 0.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("Lasso requires lam >= 0")

    alpha = 0.0
    mu = 0.0

    @property
    def label(self) -> str:
        return f"lasso(lam={self.lam:g})"


@dataclass(frozen=True)
class CustomSeparable:
    """A user supplied convex scalar regularizer.

    Parameters
    ----------
    value : callable
        Vectorized scalar function ``r(x)``.
    mu : float
        Declared strong-convexity modulus.
    prox : callable, optional
        ``prox(step, y)``; when absent the prox is found by bisection on the
        right derivative of the prox objective, which needs ``mu > 0``.
    derivative : callable, optional
        Right derivative of ``r``. Finite differences are used otherwise.
    kinks : sequence of ``(x0, left_slope, right_slope)``
        Points where ``r`` is not differentiable. They are used to place
        quadrature breakpoints at the edges of the prox dead zones.
    """

    value: Callable[[np.ndarray], np.ndarray]
    mu: float = 0.0
    prox: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None
    kinks: tuple = ()
    label: str = "custom"
    check_convexity: bool = field(default=True, compare=False)

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if self.check_convexity:
            x = np.linspace(-5.0, 5.0, 201)
            lo, hi = x[:-1], x[1:]
            mid = self.value(0.5 * (lo + hi))
            chord = 0.5 * (self.value(lo) + self.value(hi))
            if np.any(mid > chord + 1e-10 * (1.0 + np.abs(chord))):
                raise ValueError(f"regularizer {self.label!r} fails the midpoint convexity check")

    def right_derivative(self, x):
        if self.derivative is not None:
            return self.derivative(x)
        h = 1e-7 * np.maximum(1.0, np.abs(x))
        return (self.value(x + h) - self.value(x)) / h


RegularizerSpec = Union[Ridge, Lasso, ElasticNet, CustomSeparable]


@dataclass(frozen=True)
class SignalSpec:
    """Distribution of the entries of the true weight vector as a finite mixture of atoms."""

    atoms: tuple

    def __post_init__(self):
        atoms = tuple((float(v), float(w)) for v, w in self.atoms)
        if not atoms:
            raise ValueError("SignalSpec needs at least one atom")
        weights = np.array([w for _, w in atoms])
        if np.any(weights <= 0):
            raise ValueError("atom weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"atom weights must sum to 1, got {weights.sum()!r}")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def half_ones(cls) -> "SignalSpec":
        return cls(((0.0, 0.5), (1.0, 0.5)))

    @property
    def values(self) -> np.ndarray:
        return np.array([v for v, _ in self.atoms])

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms])

    def second_moment(self) -> float:
        return float(np.dot(self.weights, self.values**2))


@dataclass(frozen=True)
class EnvelopeContext:
    c1: float
    c2: float
    gamma: float

    def __post_init__(self):
        for name in ("c1", "c2", "gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"EnvelopeContext.{name} must be finite and positive, got {v!r}")

    @property
    def step(self) -> float:
        return 0.5 / self.c1

    @property
    def shift(self) -> float:
        """Scale of the Gaussian perturbation of the prox argument."""
        return self.c2 * math.sqrt(self.gamma) / (2.0 * self.c1)


@dataclass(frozen=True)
class TestFunction:
    """Smooth separable test function with a declared bound on ``|h''|``."""

    __test__ = False  # not a pytest test

    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    curvature: float
    label: str = "h"
    breakpoints: tuple = ()


def smooth_bump(eps: float) -> TestFunction:
    """``C^inf`` bump equal to 1 at the origin and vanishing for ``|x| >= eps``."""

    def value(x):
        x = np.asarray(x, dtype=float)
        u = np.clip((x / eps) ** 2, 0.0, 1.0)
        inside = u < 1.0
        safe = np.where(inside, 1.0 - u, 1.0)
        return np.where(inside, np.exp(1.0 - 1.0 / safe), 0.0)

    def derivative(x):
        x = np.asarray(x, dtype=float)
        u = np.clip((x / eps) ** 2, 0.0, 1.0)
        inside = u < 1.0
        safe = np.where(inside, 1.0 - u, 1.0)
        return np.where(inside, value(x) * (-2.0 * x / eps**2) / safe**2, 0.0)

    grid = np.linspace(-eps, eps, 4001)[1:-1]
    d = derivative(grid)
    curvature = float(np.max(np.abs(np.diff(d) / np.diff(grid)))) * 1.05
    return TestFunction(value, derivative, curvature, f"bump(eps={eps:g})", (-eps, eps))


def soft_threshold(v, thresh):
    v = np.asarray(v, dtype=float)
    out = np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)
    return float(out) if out.ndim == 0 else out


def elastic_net_params(reg: RegularizerSpec) -> Optional[tuple[float, float]]:
    """``(lam, alpha)`` for the elastic-net family, ``None`` for custom regularizers."""
    if isinstance(reg, (ElasticNet, Ridge, Lasso)):
        return float(reg.lam), float(reg.alpha)
    return None


def strong_convexity(reg: RegularizerSpec) -> float:
    return float(reg.mu)


def regularizer_value(reg: RegularizerSpec, x):
    en = elastic_net_params(reg)
    x = np.asarray(x, dtype=float)
    if en is not None:
        lam, alpha = en
        return lam * np.abs(x) + 0.5 * alpha * x * x
    return reg.value(x)


def _bisect_prox(reg: CustomSeparable, step: float, y) -> np.ndarray:
    if reg.mu <= 0:
        raise ValueError(f"prox of {reg.label!r} needs either an explicit prox or mu > 0")
    y = np.asarray(y, dtype=float)
    pad = np.abs(y) + 10.0 / reg.mu
    lo, hi = y - pad, y + pad

    def slope(x):
        return reg.right_derivative(x) + (x - y) / step

    if np.any(slope(lo) > 0) or np.any(slope(hi) < 0):
        raise ArithmeticError(f"prox bisection for {reg.label!r} failed to bracket the root")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        up = slope(mid) >= 0
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
        if np.all(hi - lo <= 1e-12 * np.maximum(1.0, np.abs(mid))):
            break
    return hi


def scalar_prox(reg: RegularizerSpec, step: float, y):
    """``argmin_x r(x) + (x - y)**2 / (2 step)``, vectorized over ``y``."""
    if not step > 0:
        raise ValueError(f"prox step must be positive, got {step!r}")
    en = elastic_net_params(reg)
    if en is not None:
        lam, alpha = en
        shrink = 1.0 + alpha * step
        return soft_threshold(np.asarray(y, dtype=float) / shrink, lam * step / shrink)
    if reg.prox is not None:
        out = np.asarray(reg.prox(step, np.asarray(y, dtype=float)), dtype=float)
    else:
        out = _bisect_prox(reg, step, y)
    return float(out) if out.ndim == 0 else out


def scalar_moreau(reg: RegularizerSpec, step: float, y):
    p = scalar_prox(reg, step, y)
    y = np.asarray(y, dtype=float)
    out = regularizer_value(reg, p) + (p - y) ** 2 / (2.0 * step)
    return float(out) if np.ndim(out) == 0 else out


def zeta_thresholds(c1: float, c2: float, gamma: float, lam: float, theta_star):
    """Edges of the soft-threshold dead zone in units of the Gaussian variable.

    The prox output vanishes exactly when ``-zeta1 <= phi <= zeta2`` under
    the sign convention of :func:`sample_theta_hat_coordinate`.
    """
    if not (c1 > 0 and c2 > 0 and gamma > 0):
        raise ValueError("c1, c2 and gamma must be positive")
    scale = math.sqrt(gamma) * c2
    theta_star = np.asarray(theta_star, dtype=float)
    z1 = (lam - 2.0 * c1 * theta_star) / scale
    z2 = (lam + 2.0 * c1 * theta_star) / scale
    if z1.ndim == 0:
        return float(z1), float(z2)
    return z1, z2


def sample_theta_hat_coordinate(reg: RegularizerSpec, ctx: EnvelopeContext, theta_star, phi):
    """Coordinate of the asymptotic estimator for given true value and Gaussian draw."""
    y = np.asarray(theta_star, dtype=float) - ctx.shift * np.asarray(phi, dtype=float)
    return scalar_prox(reg, ctx.step, y)


def _kinks(reg: RegularizerSpec) -> tuple:
    en = elastic_net_params(reg)
    if en is not None:
        lam = en[0]
        return ((0.0, -lam, lam),) if lam > 0 else ()
    return tuple(reg.kinks)


def phi_breakpoints(reg: RegularizerSpec, ctx: EnvelopeContext, theta_star: float) -> list[float]:
    """Values of the Gaussian variable at which the prox output has a kink."""
    out = []
    s, step = ctx.shift, ctx.step
    for x0, left, right in _kinks(reg):
        for slope in (left, right):
            y = x0 + step * slope
            out.append((theta_star - y) / s)
    return sorted(out)


def _rule(reg, ctx, theta_star, order) -> QuadratureRule:
    bps = phi_breakpoints(reg, ctx, theta_star)
    if bps:
        return piecewise_normal_rule(order, bps)
    return gauss_hermite_standard_normal(order)


def expected_moreau(
    reg: RegularizerSpec, ctx: EnvelopeContext, signal: SignalSpec, quad_order: int = 200
) -> float:
    """Gaussian average of the Moreau envelope by numerical quadrature.

    Regularizers with kinks are integrated with a composite rule split at
    the dead-zone edges; smooth ones use Gauss-Hermite.
    """
    if quad_order < 50:
        raise ValueError("quad_order must be at least 50")
    total = 0.0
    for a, w in signal.atoms:
        rule = _rule(reg, ctx, a, quad_order)
        y = a - ctx.shift * rule.nodes
        total += w * float(np.dot(rule.weights, scalar_moreau(reg, ctx.step, y)))
    return total


def _closed_terms(lam, alpha, c1, c2, gamma, signal):
    """Closed-form reduced envelope G and its partials for the elastic net."""
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    sg = math.sqrt(gamma)
    B = c2 * sg
    kappa = 2.0 * c1 + alpha
    G = np.zeros(np.broadcast(c1, c2).shape)
    Gc1 = np.zeros_like(G)
    Gc2 = np.zeros_like(G)
    for a, w in signal.atoms:
        A = 2.0 * c1 * a
        z1 = (lam - A) / B
        z2 = (lam + A) / B
        Q1, Q2 = q_function(z1), q_function(z2)
        p1, p2 = std_normal_pdf(z1), std_normal_pdf(z2)
        # E[(|v| - lam)_+^2] / B^2 for v ~ N(A, B^2)
        K = (z1 * z1 + 1.0) * Q1 - z1 * p1 + (z2 * z2 + 1.0) * Q2 - z2 * p2
        # E[soft(v, lam)] / B
        S = p1 - z1 * Q1 - p2 + z2 * Q2
        G = G + w * (c1 * a * a - B * B * K / (2.0 * kappa))
        Gc1 = Gc1 + w * (a * a - 2.0 * a * B * S / kappa + B * B * K / kappa**2)
        Gc2 = Gc2 - w * sg * B * (Q1 + Q2) / kappa
    return G, Gc1, Gc2


def _quadrature_terms(reg, c1, c2, gamma, signal, order):
    c1 = float(c1)
    c2 = float(c2)
    ctx = EnvelopeContext(c1, c2, gamma)
    sg = math.sqrt(gamma)
    B = c2 * sg
    G = Gc1 = Gc2 = 0.0
    for a, w in signal.atoms:
        rule = _rule(reg, ctx, a, order)
        phi = rule.nodes
        x = scalar_prox(reg, ctx.step, a - ctx.shift * phi)
        e = x - a
        G += w * float(np.dot(rule.weights, regularizer_value(reg, x) + c1 * e * e + B * phi * e))
        Gc1 += w * float(np.dot(rule.weights, e * e))
        Gc2 += w * sg * float(np.dot(rule.weights, phi * e))
    return G, Gc1, Gc2


def _vector_quadrature_terms(reg, c1, c2, gamma, signal, order):
    # Gauss-Hermite over a broadcast grid; kink-blind, used only for coarse search.
    rule = gauss_hermite_standard_normal(min(order, 20))
    c1 = np.asarray(c1, dtype=float)[..., None]
    c2 = np.asarray(c2, dtype=float)[..., None]
    sg = math.sqrt(gamma)
    B = c2 * sg
    phi = rule.nodes
    G = 0.0
    Gc1 = 0.0
    Gc2 = 0.0
    step = 0.5 / c1
    for a, w in signal.atoms:
        y = a - (B / (2.0 * c1)) * phi
        if elastic_net_params(reg) is None and reg.prox is None:
            x = _vector_bisect(reg, step, y)
        else:
            x = _prox_variable_step(reg, step, y)
        e = x - a
        G = G + w * ((regularizer_value(reg, x) + c1 * e * e + B * phi * e) @ rule.weights)
        Gc1 = Gc1 + w * ((e * e) @ rule.weights)
        Gc2 = Gc2 + w * sg * ((phi * e) @ rule.weights)
    return G, Gc1, Gc2


def _prox_variable_step(reg, step, y):
    en = elastic_net_params(reg)
    if en is not None:
        lam, alpha = en
        shrink = 1.0 + alpha * step
        return soft_threshold(y / shrink, lam * step / shrink)
    return np.asarray(reg.prox(step, y), dtype=float)


def _vector_bisect(reg, step, y, iterations=48):
    if reg.mu <= 0:
        raise ValueError(f"prox of {reg.label!r} needs either an explicit prox or mu > 0")
    pad = np.abs(y) + 10.0 / reg.mu
    lo, hi = y - pad, y + pad
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        up = reg.right_derivative(mid) + (mid - y) / step >= 0
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    return hi


def reduced_envelope(
    reg: RegularizerSpec,
    c1,
    c2,
    gamma: float,
    signal: SignalSpec,
    method: str = "auto",
    quad_order: int = 200,
):
    """Return ``(G, dG/dc1, dG/dc2)``.

    ``method`` is ``"closed"`` (elastic-net family only), ``"quadrature"`` or
    ``"auto"``. Array arguments are supported; on the quadrature path arrays
    fall back to a kink-blind Gauss-Hermite rule meant for coarse searches.
    """
    en = elastic_net_params(reg)
    if method == "auto":
        method = "closed" if en is not None else "quadrature"
    if method == "closed":
        if en is None:
            raise ValueError(f"no closed form for {reg.label!r}")
        G, Gc1, Gc2 = _closed_terms(en[0], en[1], c1, c2, gamma, signal)
        if np.ndim(G) == 0:
            return float(G), float(Gc1), float(Gc2)
        return G, Gc1, Gc2
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    if np.ndim(c1) == 0 and np.ndim(c2) == 0:
        return _quadrature_terms(reg, c1, c2, gamma, signal, quad_order)
    return _vector_quadrature_terms(reg, c1, c2, gamma, signal, quad_order)


def expected_moreau_closed_form(
    lam: float, alpha: float, ctx: EnvelopeContext, signal: SignalSpec
) -> float:
    """Closed-form Gaussian average of the elastic-net Moreau envelope.

    Obtained by integrating the three branches of the soft-threshold prox:
    with ``A = 2 c1 a``, ``B = c2 sqrt(gamma)`` and ``kappa = 2 c1 + alpha``,
    the average equals ``c1 a**2 + B**2 / (4 c1) - E[(|v| - lam)_+**2] / (2 kappa)``
    for ``v ~ N(A, B**2)``, and the last expectation reduces to Gaussian tail
    probabilities at the two dead-zone edges.
    """
    if lam < 0 or alpha < 0:
        raise ValueError("lam and alpha must be non-negative")
    G, _, _ = _closed_terms(lam, alpha, ctx.c1, ctx.c2, ctx.gamma, signal)
    B = ctx.c2 * math.sqrt(ctx.gamma)
    return float(G) + B * B / (4.0 * ctx.c1)


def perturbed(reg: RegularizerSpec, tau2: float, h: TestFunction) -> RegularizerSpec:
    """The regularizer ``r + tau2 * h`` as a custom separable function."""
    if tau2 == 0.0:
        return reg
    mu = strong_convexity(reg) - abs(tau2) * h.curvature
    if mu <= 0:
        raise ValueError("r + tau2*h is not strongly convex for this tau2")
    en = elastic_net_params(reg)
    if en is not None:
        lam, alpha = en

        def value(x):
            return lam * np.abs(x) + 0.5 * alpha * x * x + tau2 * h.value(x)

        def derivative(x):
            x = np.asarray(x, dtype=float)
            return lam * np.where(x >= 0, 1.0, -1.0) + alpha * x + tau2 * h.derivative(x)

        d0 = float(tau2 * h.derivative(0.0))
        kinks = ((0.0, -lam + d0, lam + d0),) if lam > 0 else ()
    else:
        base = reg

        def value(x):
            return base.value(x) + tau2 * h.value(x)

        def derivative(x):
            return base.right_derivative(x) + tau2 * h.derivative(x)

        kinks = tuple(
            (x0, l + float(tau2 * h.derivative(x0)), r + float(tau2 * h.derivative(x0)))
            for x0, l, r in base.kinks
        )
    return CustomSeparable(
        value=value,
        mu=mu,
        derivative=derivative,
        kinks=kinks,
        label=f"{reg.label}+{tau2:g}*{h.label}",
        check_convexity=False,
    )

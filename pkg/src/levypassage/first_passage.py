"""First-passage time T_b = inf{t : D_t >= b}: transforms and exact laws.

Routes for the discounted penalty transform
phi_w(delta, b) = E[exp(-delta T_b) w(b - D(T_b-), D(T_b) - b)]:

  * the Pollaczek-Khinchine series sum_k g*k * h built on the renewal kernels,
  * the scale-function identity E[e^{-delta T_b}] = Z(b) - delta/rho(delta) W(b),
  * exact closed forms for the pure-gamma (Park-Padgett), Brownian-drift
    (inverse Gaussian) and phase-type special cases,
  * the normal approximation for large thresholds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import digamma
from scipy.stats import norm

from .errors import SeriesNotConverged, WrongKind, ZeroMeanDrift
from .lundberg import ScaleSet, ph_root_data, solve_lundberg
from .models import (
    KIND_BROWNIAN,
    KIND_PH,
    KIND_PURE_GAMMA,
    ModelSpec,
)
from .numerics import (
    GridFunction,
    grid_convolve,
    hyp2f2,
    reg_gamma_p,
    reg_gamma_q,
)
from .renewal import build_renewal_kernels

ROUTE_PK_SERIES = "pk_series"
ROUTE_SCALE = "scale_formula"
ROUTE_CLOSED = "closed_form"


@dataclass(frozen=True)
class PenaltySpec:
    """Bounded penalty w(undershoot, overshoot) of the crossing data.

    ``tag`` selects fast paths: "one" (w identically 1), or
    "overshoot_indicator" with threshold ``eps`` (w = 1{overshoot > eps}).
    A general broadcasting callable w(u, v) may be supplied instead.
    """

    tag: str = "one"
    eps: float = 0.0
    w: Callable | None = None
    bound: float = 1.0

    def creep_value(self) -> float:
        """w(0, 0): the weight a continuous (creeping) crossing receives."""
        if self.tag == "one":
            return 1.0
        if self.tag == "overshoot_indicator":
            return 0.0
        return float(self.w(np.zeros(1), np.zeros(1))[0])

    def omega_selector(self):
        if self.tag in ("one", "overshoot_indicator"):
            return self.tag
        return self.w


@dataclass(frozen=True)
class PassageTransform:
    """phi_w(delta, .) tabulated over thresholds b in [0, b_max]."""

    delta: float
    b_grid: GridFunction
    route: str

    def __call__(self, b):
        return self.b_grid(b)


def pk_series_transform(
    model: ModelSpec,
    delta: float,
    penalty: PenaltySpec | None = None,
    b_max: float = 4.0,
    n: int = 2049,
    k_max: int = 200,
) -> PassageTransform:
    """Penalty transform by the renewal series phi = sum_k g*k * h.

    The series terms decay geometrically for delta > 0 (the kernel g has mass
    below 1); truncation when the term sup-norm falls below 1e-10.
    """
    if delta <= 0:
        raise ValueError("the series route requires delta > 0")
    penalty = penalty or PenaltySpec()
    rho = solve_lundberg(model, delta).rho
    kernels = build_renewal_kernels(
        model,
        delta,
        rho,
        b_max,
        n,
        omega=penalty.omega_selector(),
        creep_weight=penalty.creep_value(),
        indicator_eps=penalty.eps,
    )
    term = kernels.h
    total = term.values.copy()
    converged = False
    for _ in range(k_max):
        if np.max(np.abs(term.values)) < 1e-10:
            converged = True
            break
        term = grid_convolve(kernels.g, term)
        total += term.values
    if not converged and np.max(np.abs(term.values)) > 1e-8:
        raise SeriesNotConverged(
            f"renewal series sup-norm {np.max(np.abs(term.values)):.2e} after {k_max} terms"
        )
    return PassageTransform(
        delta, GridFunction(0.0, kernels.h.h, total), ROUTE_PK_SERIES
    )


def scale_formula_transform(scales: ScaleSet, b: float) -> float:
    """E[e^{-delta T_b}] = Z(b) - delta/rho(delta) * W(b).

    Evaluated through the algebraically equal but numerically stable form
    1 - (delta/rho) int_0^b (W' - rho W); the literal difference of Z and W
    loses all significant digits once rho*b is large."""
    if b < 0:
        raise ValueError("threshold must be nonnegative")
    if scales.delta == 0:
        return 1.0
    vals = scales.passage_transform_values()
    return float(GridFunction(0.0, scales.h, vals)(b))


def transform_from_scales(scales: ScaleSet) -> PassageTransform:
    """Whole-grid version of the scale-function identity (stable form)."""
    vals = scales.passage_transform_values()
    return PassageTransform(
        scales.delta, GridFunction(0.0, scales.h, vals), ROUTE_SCALE
    )


# ---------------------------------------------------------------------------
# Exact laws for the special cases


def gamma_exact_cdf(model: ModelSpec, b: float, t: float) -> float:
    """Park-Padgett cdf of T_b for the pure gamma process:

        F(t) = Gamma(alpha t, b/xi) / Gamma(alpha t) = P[D_t >= b].
    """
    if model.kind != KIND_PURE_GAMMA:
        raise WrongKind("exact gamma passage law needs kind=pure_gamma")
    if b <= 0 or t < 0:
        raise ValueError("need b > 0 and t >= 0")
    if t == 0:
        return 0.0
    return reg_gamma_q(model.alpha * t, b / model.xi)


def gamma_exact_sf(model: ModelSpec, b: float, t: float) -> float:
    """P[T_b > t] = P[D_t < b] (monotone paths)."""
    return 1.0 - gamma_exact_cdf(model, b, t)


def gamma_exact_pdf(model: ModelSpec, b: float, t: float) -> float:
    """Park-Padgett density of T_b:

        f(t) = alpha (psi(alpha t) - log(b/xi)) gamma(alpha t, b/xi)/Gamma(alpha t)
               + alpha/((alpha t)^2 Gamma(alpha t)) (b/xi)^{alpha t}
                 2F2(alpha t, alpha t; alpha t+1, alpha t+1; -b/xi).
    """
    if model.kind != KIND_PURE_GAMMA:
        raise WrongKind("exact gamma passage law needs kind=pure_gamma")
    if b <= 0 or t <= 0:
        raise ValueError("need b > 0 and t > 0")
    s = model.alpha * t
    z = b / model.xi
    first = model.alpha * (digamma(s) - math.log(z)) * reg_gamma_p(s, z)
    series = hyp2f2(s, s, s + 1.0, s + 1.0, -z)
    # (z^s / Gamma(s)) / s^2 in log space to survive large alpha*t
    log_pref = s * math.log(z) - math.lgamma(s) - 2.0 * math.log(s)
    second = model.alpha * math.exp(log_pref) * series
    return first + second


def inverse_gaussian_pdf(model: ModelSpec, b: float, t) -> np.ndarray:
    """Density of T_b for Brownian motion with positive drift (normalized
    inverse Gaussian):

        f(t) = b / sqrt(2 pi sigma^2 t^3) exp(-(b - mu t)^2 / (2 t sigma^2)).
    """
    if model.kind != KIND_BROWNIAN:
        raise WrongKind("inverse Gaussian law needs kind=brownian_drift")
    if model.mu <= 0:
        raise ValueError("inverse Gaussian density needs mu > 0")
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(
            t > 0,
            b
            / np.sqrt(2.0 * np.pi * model.sigma**2 * t**3)
            * np.exp(-((b - model.mu * t) ** 2) / (2.0 * t * model.sigma**2)),
            0.0,
        )
    return out if out.ndim else float(out)


def inverse_gaussian_cdf(model: ModelSpec, b: float, t) -> np.ndarray:
    """P(T_b <= t) for Brownian motion with drift."""
    if model.kind != KIND_BROWNIAN:
        raise WrongKind("inverse Gaussian law needs kind=brownian_drift")
    t = np.asarray(t, dtype=float)
    mu, sig = model.mu, model.sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        st = sig * np.sqrt(t)
        out = np.where(
            t > 0,
            norm.cdf((mu * t - b) / st)
            + np.exp(2.0 * mu * b / sig**2) * norm.cdf(-(b + mu * t) / st),
            0.0,
        )
    return out if out.ndim else float(out)


def ph_transform(model: ModelSpec, delta: float, b: float) -> float:
    """E[e^{-delta T_b}] = sum_i A_i e^{-xi_i b} for phase-type jumps."""
    if model.kind != KIND_PH:
        raise WrongKind("phase-type transform needs kind=perturbed_cp_ph")
    data = ph_root_data(model, delta)
    val = np.sum(data.a_coeffs * np.exp(-data.xi_roots * b))
    if abs(val.imag) > 1e-9 * max(1.0, abs(val.real)):
        raise SeriesNotConverged("phase-type transform has a large imaginary residue")
    return float(val.real)


def clt_passage_approx(model: ModelSpec, b: float) -> tuple[float, float]:
    """(mean, std) of the normal approximation of T_b for large b:

        mean = b / E[D_1],  std = sqrt(b * phi_D''(0) / |phi_D'(0)|^3).
    """
    m = model.mean_d1
    if m == 0:
        raise ZeroMeanDrift("normal approximation needs E[D_1] != 0")
    var_rate = float(model.phi_d_second(0.0))
    return b / m, math.sqrt(b * var_rate / m**3)

"""Last-passage time L_b = sup{t : D_t <= b} laws, free and reflected.

Everything is built from two ingredients: the marginal density of D_t and
the escape probability

    P(never return below b | currently at a > b) = 1 - e^{-rho(0) (a - b)},

with rho(0) the positive Lundberg root at zero discount.  In particular

    P(L_b < t)              = int_b^inf esc(a-b) f_{D_t}(a) da,
    P(L_b >= t, D_t in da)  = (1 - esc(a-b)) f_{D_t}(a) da.

For nondecreasing paths (sigma = 0) the escape probability is 1 above the
threshold and the last passage coincides with the first passage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import gamma as gamma_dist
from scipy.stats import norm

from .errors import NoJumpPart, TailNotDominated, WrongKind
from .first_passage import PassageTransform
from .lundberg import ScaleSet, escape_probability, escape_rate
from .models import (
    KIND_BROWNIAN,
    KIND_PERTURBED_GAMMA,
    KIND_PH,
    KIND_PURE_GAMMA,
    ModelSpec,
)
from .numerics import GridFunction, _pcd_core_integral


@dataclass(frozen=True)
class MarginalDensityD:
    """Tabulated density of D_t (zero outside the grid)."""

    t: float
    f: GridFunction

    def __call__(self, a):
        return self.f(a)

    def mass(self) -> float:
        return float(np.trapezoid(self.f.values, dx=self.f.h))

    def grid(self) -> np.ndarray:
        return self.f.grid()


def _grid_bounds(model: ModelSpec, t: float) -> tuple[float, float]:
    mean = model.mean_d1 * t
    spread = math.sqrt(model.var_d1 * t)
    lo = mean - 10.0 * spread - 1.0
    hi = mean + 14.0 * spread + 1.0
    if model.kind == KIND_PURE_GAMMA:
        lo = model.mu * t
    if model.kind in (KIND_PURE_GAMMA, KIND_PERTURBED_GAMMA):
        hi = max(hi, model.mu * t + gamma_dist.isf(1e-13, model.alpha * t, scale=model.xi))
    return lo, hi


def perturbed_gamma_density(model: ModelSpec, t: float, a) -> np.ndarray:
    """Closed-form density of D_t = mu t + G_t + sigma B_t for gamma G:

        f(a) = (sigma sqrt(t))^{alpha t - 1} / (sqrt(2 pi) xi^{alpha t})
               e^{-atil^2/(2 sigma^2 t) + z^2/4} D_{-alpha t}(z),

    with atil = a - mu t and z = sigma sqrt(t)/xi - atil/(sigma sqrt(t)),
    evaluated in log space through the parabolic-cylinder core integral.
    The prefactor power is alpha t - 1 (fixed against the direct convolution
    of the gamma and Gaussian densities, which also fixes the exponent sign).
    """
    if model.kind != KIND_PERTURBED_GAMMA:
        raise WrongKind("closed-form density needs kind=perturbed_gamma")
    a_in = np.asarray(a, dtype=float)
    scalar = a_in.ndim == 0
    a = np.atleast_1d(a_in)
    s = model.alpha * t
    st = model.sigma * math.sqrt(t)
    atil = a - model.mu * t
    z = st / model.xi - atil / st
    core = _pcd_core_integral(s, z)  # int_0^inf e^{-(x+z)^2/2} x^{s-1} dx
    log_f = (
        0.5 * (st / model.xi) ** 2
        - atil / model.xi
        + (s - 1.0) * math.log(st)
        - 0.5 * math.log(2.0 * math.pi)
        - s * math.log(model.xi)
        - math.lgamma(s)
        + np.log(core)
    )
    out = np.exp(log_f)
    return float(out[0]) if scalar else out


def _ph_density_grid(model: ModelSpec, t: float, xs: np.ndarray) -> np.ndarray:
    """Poisson-weighted convolution series for compound-Poisson + Gaussian."""
    h = xs[1] - xs[0]
    lam_t = model.lam * t
    n_max = int(lam_t + 10.0 * math.sqrt(lam_t) + 20)
    weights = np.empty(n_max + 1)
    weights[0] = math.exp(-lam_t)
    for k in range(1, n_max + 1):
        weights[k] = weights[k - 1] * lam_t / k
    # jump-size density on [0, L]; the compound sum lives below the grid span
    span = xs[-1] - xs[0]
    n_jump = int(span / h) + 1
    jump_x = h * np.arange(n_jump)
    # the one-jump term enters exactly; n >= 2 folds go through the FFT with
    # trapezoid end-weights baked into the sampled density (p^{*n}(0) = 0, so
    # the index-0 half-weight artifact is O(h^2) there)
    p_vals = model.ph.density(jump_x)
    p_w = p_vals * h
    p_w[0] *= 0.5
    m_fft = 1 << int(np.ceil(np.log2(2 * n_jump)))
    p_hat = np.fft.rfft(p_w, m_fft)
    acc_hat = np.zeros_like(p_hat)
    cur = p_hat.copy()
    for k in range(2, n_max + 1):
        cur = cur * p_hat
        if weights[k] > 1e-300:
            acc_hat = acc_hat + weights[k] * cur
    jump_mix = weights[1] * p_vals + np.fft.irfft(acc_hat, m_fft)[:n_jump] / h
    jump_mix = np.maximum(jump_mix, 0.0)
    # convolve with the Gaussian part N(mu t, sigma^2 t)
    gauss = norm.pdf(xs, loc=model.mu * t, scale=model.sigma * math.sqrt(t))
    mix_w = jump_mix * h
    mix_w[0] *= 0.5
    m2 = 1 << int(np.ceil(np.log2(xs.size + n_jump)))
    conv = np.fft.irfft(np.fft.rfft(gauss, m2) * np.fft.rfft(mix_w, m2), m2)
    out = weights[0] * gauss + conv[: xs.size]
    return np.maximum(out, 0.0)


def density_of_dt(model: ModelSpec, t: float, n: int | None = None) -> MarginalDensityD:
    """Marginal density of D_t on an automatically sized grid."""
    if t <= 0:
        raise ValueError("time must be positive")
    if n is None:
        # pure gamma: steep (or singular) left endpoint; phase type: repeated
        # discrete convolutions have O(h^2) error worth damping
        n = 16385 if model.kind in (KIND_PURE_GAMMA, KIND_PH) else 4097
    lo, hi = _grid_bounds(model, t)
    xs = np.linspace(lo, hi, n)
    h = xs[1] - xs[0]
    if model.kind == KIND_BROWNIAN:
        vals = norm.pdf(xs, loc=model.mu * t, scale=model.sigma * math.sqrt(t))
    elif model.kind == KIND_PURE_GAMMA:
        vals = gamma_dist.pdf(xs - model.mu * t, model.alpha * t, scale=model.xi)
    elif model.kind == KIND_PERTURBED_GAMMA:
        vals = perturbed_gamma_density(model, t, xs)
    else:
        vals = _ph_density_grid(model, t, xs)
    return MarginalDensityD(t, GridFunction(lo, h, vals, extrapolate="zero"))


# ---------------------------------------------------------------------------
# Free-process last passage


def last_passage_cdf(
    model: ModelSpec,
    b: float,
    t: float,
    rho0: float | None = None,
    density: MarginalDensityD | None = None,
    n_quad: int = 4097,
) -> float:
    """P(L_b < t) = int_b^inf esc(a - b) f_{D_t}(a) da."""
    if b <= 0:
        raise ValueError("threshold must be positive")
    rho0 = escape_rate(model) if rho0 is None else rho0
    if model.kind == KIND_PURE_GAMMA:
        # monotone paths: esc = 1 above b, so the law collapses to P(D_t >= b)
        return float(gamma_dist.sf(b - model.mu * t, model.alpha * t, scale=model.xi))
    density = density or density_of_dt(model, t)
    hi = density.f.x_max
    if hi <= b:
        return 0.0
    xs = np.linspace(b, hi, n_quad)
    vals = escape_probability(xs - b, rho0) * density(xs)
    return float(np.trapezoid(vals, xs))


def last_passage_joint_density(
    model: ModelSpec,
    b: float,
    t: float,
    a,
    rho0: float | None = None,
    density: MarginalDensityD | None = None,
):
    """Density of [L_b >= t, D_t in da]: (1 - esc(a-b)) f_{D_t}(a)."""
    rho0 = escape_rate(model) if rho0 is None else rho0
    density = density or density_of_dt(model, t)
    a = np.asarray(a, dtype=float)
    out = (1.0 - escape_probability(a - b, rho0)) * density(a)
    return out if np.ndim(out) else float(out)


def last_passage_joint_mass(
    model: ModelSpec,
    b: float,
    t: float,
    rho0: float | None = None,
    density: MarginalDensityD | None = None,
    n_quad: int = 4097,
) -> float:
    """P(L_b >= t): the a-integral of the joint density, split at a = b where
    the escape factor may be discontinuous (sigma = 0 kinds)."""
    rho0 = escape_rate(model) if rho0 is None else rho0
    if model.kind == KIND_PURE_GAMMA:
        return float(gamma_dist.cdf(b - model.mu * t, model.alpha * t, scale=model.xi))
    density = density or density_of_dt(model, t)
    lo, hi = density.f.x0, density.f.x_max
    total = 0.0
    if lo < b:
        xs = np.linspace(lo, min(b, hi), n_quad)
        total += float(np.trapezoid(density(xs), xs))
    if hi > b:
        xs = np.linspace(b, hi, n_quad)
        vals = (1.0 - escape_probability(xs - b, rho0)) * density(xs)
        total += float(np.trapezoid(vals, xs))
    return total


def bm_last_passage_density(model: ModelSpec, b: float, t) -> np.ndarray:
    """Density of L_b for Brownian motion with drift:

        mu / (sigma sqrt(2 pi t)) exp(-(b - mu t)^2 / (2 t sigma^2)).
    """
    if model.kind != KIND_BROWNIAN:
        raise WrongKind("closed-form last-passage density needs kind=brownian_drift")
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(
            t > 0,
            model.mu
            / (model.sigma * np.sqrt(2.0 * np.pi * t))
            * np.exp(-((b - model.mu * t) ** 2) / (2.0 * t * model.sigma**2)),
            0.0,
        )
    return out if out.ndim else float(out)


def bm_last_passage_cdf(model: ModelSpec, b: float, t) -> np.ndarray:
    """Closed-form P(L_b < t) for Brownian motion with drift."""
    if model.kind != KIND_BROWNIAN:
        raise WrongKind("closed-form last-passage cdf needs kind=brownian_drift")
    t = np.asarray(t, dtype=float)
    mu, sig = model.mu, model.sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        st = sig * np.sqrt(t)
        out = np.where(
            t > 0,
            norm.cdf((mu * t - b) / st)
            - np.exp(2.0 * mu * b / sig**2) * norm.cdf(-(mu * t + b) / st),
            0.0,
        )
    return out if out.ndim else float(out)


def last_passage_overshoot_transform(
    model: ModelSpec,
    scales: ScaleSet,
    b: float,
    y,
    w,
    rho0: float | None = None,
):
    """Joint transform-density of (L_b, undershoot, overshoot):

        E[e^{-delta L_b}; b - D(L_b-) in dy, D(L_b) - b in dw] / (dy dw)
          = [e^{rho(b-y)} / phi_D'(rho) - W_delta(b-y)] [1 - e^{-rho(0) w}] q(w+y),

    for 0 <= y < b, w > 0, with delta the scale set's discount.  The bracket
    equals e^{rho(b-y)} (1/phi_D'(rho) - tilted(b-y)) >= 0.
    """
    if not model.has_jumps:
        raise NoJumpPart("the overshoot law requires a jump part")
    rho0 = escape_rate(model) if rho0 is None else rho0
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(y < 0) or np.any(y >= b):
        raise ValueError("undershoot position must lie in [0, b)")
    if np.any(w <= 0):
        raise ValueError("overshoot must be positive")
    rho = scales.rho.rho
    bracket = np.exp(rho * (b - y)) * (
        1.0 / scales.phi_prime_at_rho - scales.tilted(b - y)
    )
    view = model.levy_measure()
    out = bracket * (-np.expm1(-rho0 * w)) * view.density(w + y)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Reflected-process last passage


def reflected_last_passage_transform(
    model: ModelSpec,
    phi: PassageTransform,
    b: float,
    rho0: float | None = None,
) -> float:
    """E[e^{-delta L*_b}] = E[D_1] int_b^inf W'(a-b) phi(delta, a) da.

    With the bounded escape form E[D_1] W(z) = 1 - e^{-rho(0) z} this is

        rho(0) int_b^inf e^{-rho(0)(a-b)} phi(delta, a) da,

    whose integrand always decays faster than e^{-rho(0)(a-b)} since
    phi <= 1 and is decreasing in a.
    """
    rho0 = escape_rate(model) if rho0 is None else rho0
    a_max = phi.b_grid.x_max
    if a_max <= b:
        raise TailNotDominated("transform grid must extend beyond the threshold")
    residual = math.exp(-rho0 * (a_max - b))
    if residual > 1e-6:
        raise TailNotDominated(
            f"grid tail residual {residual:.2e} > 1e-6; extend the phi grid"
        )
    xs = np.linspace(b, a_max, 8193)
    vals = rho0 * np.exp(-rho0 * (xs - b)) * phi.b_grid(xs)
    core = float(np.trapezoid(vals, xs))
    return core + residual * float(phi.b_grid(a_max))


def reflected_last_passage_exp_joint(
    model: ModelSpec,
    scales: ScaleSet,
    b: float,
    a,
    rho0: float | None = None,
):
    """Density of [L*_b >= T, D*_T in da] for an independent T ~ Exp(delta):

        (1 - esc(a-b)) * (-d phi(delta, a)/da),
        -d phi/da = (delta/rho) W'(a) - delta W(a) = (delta/rho) u_delta(a) >= 0.
    """
    rho0 = escape_rate(model) if rho0 is None else rho0
    a = np.asarray(a, dtype=float)
    if np.any(a < b):
        raise ValueError("the joint density is supported on a >= b")
    delta, rho = scales.delta, scales.rho.rho
    minus_dphi = delta / rho * np.asarray(scales.u_delta(a))
    out = (1.0 - escape_probability(a - b, rho0)) * minus_dphi
    return out if np.ndim(out) else float(out)

"""Degradation models: Brownian-perturbed subordinators.

The process is D_t = mu*t + J_t + sigma*B_t with J a driftless subordinator
(gamma or compound-Poisson with phase-type jumps).  A ModelSpec is the single
source of truth for the Laplace exponent

    phi_D(u) = -mu*u + int_0^inf (exp(-u x) - 1) Q(dx) + sigma^2 u^2 / 2,

so that E[exp(-u D_t)] = exp(t * phi_D(u)), and for the Levy measure Q.

The gamma jump part uses the shape/scale convention: Q(dx) = alpha x^-1
exp(-x/xi) dx, hence the jump contribution to phi_D is -alpha*log(1 + u*xi)
and E[J_1] = alpha*xi.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.special import exp1

from .errors import NoJumpPart, SchemaError
from .numerics import GridFunction, find_root_bracketed

KIND_BROWNIAN = "brownian_drift"
KIND_PURE_GAMMA = "pure_gamma"
KIND_PERTURBED_GAMMA = "perturbed_gamma"
KIND_PH = "perturbed_cp_ph"

_GAMMA_KINDS = (KIND_PURE_GAMMA, KIND_PERTURBED_GAMMA)
ALL_KINDS = (KIND_BROWNIAN, KIND_PURE_GAMMA, KIND_PERTURBED_GAMMA, KIND_PH)


def _e1_scaled(z: np.ndarray) -> np.ndarray:
    """exp(z) * E1(z) for z > 0, overflow-free."""
    shape = np.shape(z)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.empty_like(z)
    small = z <= 30.0
    if small.any():
        out[small] = np.exp(z[small]) * exp1(z[small])
    if (~small).any():
        zl = z[~small]
        # alternating asymptotic series sum_k (-1)^k k! / z^k, truncated at the
        # smallest term; for z > 30 the floor is below 1e-13 relative
        acc = np.ones_like(zl)
        term = np.ones_like(zl)
        for k in range(1, 40):
            new = term * k / zl
            stop = new >= np.abs(term)
            term = np.where(stop, 0.0, -new)
            acc += term
            if np.all(term == 0.0):
                break
        out[~small] = acc / zl
    return out.reshape(shape)


@dataclass(frozen=True)
class PhaseType:
    """Representation (alpha, T) of a phase-type jump-size law."""

    alpha: np.ndarray
    t_mat: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        t_mat = np.atleast_2d(np.asarray(self.t_mat, dtype=float))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "t_mat", t_mat)
        m = alpha.size
        if t_mat.shape != (m, m):
            raise ValueError(f"T must be {m}x{m}, got {t_mat.shape}")
        if np.any(alpha < 0) or alpha.sum() > 1 + 1e-12:
            raise ValueError("initial distribution entries must be >= 0 and sum <= 1")
        if np.any(np.diag(t_mat) >= 0):
            raise ValueError("sub-generator diagonal must be negative")
        off = t_mat - np.diag(np.diag(t_mat))
        if np.any(off < -1e-12):
            raise ValueError("sub-generator off-diagonals must be nonnegative")
        if np.any(t_mat.sum(axis=1) > 1e-12):
            raise ValueError("sub-generator row sums must be nonpositive")

    @property
    def order(self) -> int:
        return self.alpha.size

    @property
    def exit_vector(self) -> np.ndarray:
        return -self.t_mat @ np.ones(self.order)

    def moment(self, k: int) -> float:
        """E[J^k] = k! * alpha (-T)^-k 1."""
        v = np.ones(self.order)
        for _ in range(k):
            v = np.linalg.solve(-self.t_mat, v)
        return math.factorial(k) * float(self.alpha @ v)

    def _eig_action(self):
        cached = self.__dict__.get("_eig_cache")
        if cached is None:
            w, v = np.linalg.eig(self.t_mat)
            try:
                vinv = np.linalg.inv(v)
                ok = np.linalg.cond(v) < 1e10
            except np.linalg.LinAlgError:
                ok = False
                vinv = None
            cached = (ok, w, v, vinv)
            object.__setattr__(self, "_eig_cache", cached)
        return cached

    def front_action(self, x, rear: np.ndarray) -> np.ndarray:
        """alpha @ expm(x T) @ rear, vectorized over x >= 0."""
        shape = np.shape(x)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ok, w, v, vinv = self._eig_action()
        if ok:
            c = (self.alpha @ v) * (vinv @ rear)
            out = np.real(np.exp(np.outer(x, w)) @ c)
        else:  # defective T: batched scaling-and-squaring
            mats = expm(x[:, None, None] * self.t_mat[None, :, :])
            out = np.einsum("i,nij,j->n", self.alpha, mats, rear)
        return out.reshape(shape)

    def density(self, x) -> np.ndarray:
        shape = np.shape(x)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        pos = x >= 0
        if pos.any():
            out[pos] = np.maximum(self.front_action(x[pos], self.exit_vector), 0.0)
        return out.reshape(shape)

    def survival(self, x) -> np.ndarray:
        shape = np.shape(x)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.full_like(x, self.alpha.sum())
        pos = x > 0
        if pos.any():
            out[pos] = np.clip(self.front_action(x[pos], np.ones(self.order)), 0.0, None)
        return out.reshape(shape)


@dataclass(frozen=True)
class ModelSpec:
    """Parameters of one degradation model; immutable after validation."""

    kind: str
    mu: float = 0.0
    sigma: float = 0.0
    alpha: float | None = None  # gamma shape rate (1/time)
    xi: float | None = None  # gamma jump scale (deg units)
    lam: float | None = None  # compound-Poisson intensity (1/time)
    ph: PhaseType | None = None

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.mu < 0:
            raise ValueError("drift mu must be nonnegative")
        if self.kind == KIND_PURE_GAMMA:
            if self.sigma != 0:
                raise ValueError("pure_gamma requires sigma = 0")
        elif self.sigma <= 0:
            raise ValueError(f"{self.kind} requires sigma > 0")
        if self.kind in _GAMMA_KINDS:
            if not self.alpha or self.alpha <= 0 or not self.xi or self.xi <= 0:
                raise ValueError("gamma kinds require alpha > 0 and xi > 0")
        if self.kind == KIND_PH:
            if not self.lam or self.lam <= 0:
                raise ValueError("phase-type kind requires intensity lambda > 0")
            if self.ph is None:
                raise ValueError("phase-type kind requires a (alpha, T) representation")
        if self.mean_d1 <= 0:
            raise ValueError(
                f"E[D_1] = {self.mean_d1:g} must be positive (process must drift to +inf)"
            )

    # -- moments of D_1

    @property
    def has_jumps(self) -> bool:
        return self.kind != KIND_BROWNIAN

    @property
    def jump_mean(self) -> float:
        if self.kind == KIND_BROWNIAN:
            return 0.0
        if self.kind in _GAMMA_KINDS:
            return self.alpha * self.xi
        return self.lam * self.ph.moment(1)

    @property
    def jump_second_moment(self) -> float:
        if self.kind == KIND_BROWNIAN:
            return 0.0
        if self.kind in _GAMMA_KINDS:
            return self.alpha * self.xi**2
        return self.lam * self.ph.moment(2)

    @property
    def mean_d1(self) -> float:
        return self.mu + self.jump_mean

    @property
    def var_d1(self) -> float:
        return self.sigma**2 + self.jump_second_moment

    # -- Laplace exponent and derivatives

    def phi_d(self, u):
        """phi_D(u) with E[exp(-u D_t)] = exp(t phi_D(u)); phi_D(0) = 0."""
        u = np.asarray(u)
        out = -self.mu * u + 0.5 * (self.sigma * u) ** 2
        if self.kind in _GAMMA_KINDS:
            out = out - self.alpha * _log1p_any(u * self.xi)
        elif self.kind == KIND_PH:
            out = out + self.lam * (self._ph_resolvent(u, power=1) - 1.0)
        return out if out.ndim else out[()]

    def phi_d_prime(self, u):
        u = np.asarray(u)
        out = -self.mu + self.sigma**2 * u
        if self.kind in _GAMMA_KINDS:
            out = out - self.alpha * self.xi / (1.0 + u * self.xi)
        elif self.kind == KIND_PH:
            out = out - self.lam * self._ph_resolvent(u, power=2)
        return out if out.ndim else out[()]

    def phi_d_second(self, u):
        u = np.asarray(u)
        out = np.full(np.shape(u) or (), self.sigma**2, dtype=float)
        if self.kind in _GAMMA_KINDS:
            out = out + self.alpha * self.xi**2 / (1.0 + u * self.xi) ** 2
        elif self.kind == KIND_PH:
            out = out + 2.0 * self.lam * self._ph_resolvent(u, power=3)
        return out if out.ndim else out[()]

    def _ph_resolvent(self, u, power: int):
        """alpha (uI - T)^-power t, batched over u (real or complex)."""
        shape = np.shape(u)
        u = np.atleast_1d(np.asarray(u))
        m = self.ph.order
        eye = np.eye(m)
        mats = u[:, None, None] * eye[None, :, :] - self.ph.t_mat[None, :, :]
        vec = np.broadcast_to(self.ph.exit_vector, (u.size, m))
        x = vec
        for _ in range(power):
            x = np.linalg.solve(mats, x[..., None])[..., 0]
        out = x @ self.ph.alpha
        return out.reshape(shape)

    def levy_measure(self) -> "LevyMeasureView":
        if not self.has_jumps:
            raise NoJumpPart("Brownian-with-drift model has no jump part")
        if self.kind in _GAMMA_KINDS:
            return GammaMeasure(self.alpha, self.xi)
        return PHMeasure(self.lam, self.ph)


def _log1p_any(z):
    z = np.asarray(z)
    if np.iscomplexobj(z):
        return np.log(1.0 + z)
    return np.log1p(z)


# ---------------------------------------------------------------------------
# Levy measure views


class LevyMeasureView:
    """Density, tail, and exponentially weighted tails of the jump measure."""

    def density(self, x) -> np.ndarray:
        raise NotImplementedError

    def tail(self, x) -> np.ndarray:
        """Qbar(x) = Q([x, inf))."""
        raise NotImplementedError

    def partial_moment(self, x) -> np.ndarray:
        """int_0^x y Q(dy)."""
        raise NotImplementedError

    def exp_tail(self, rho: float, x) -> np.ndarray:
        """int_x^inf exp(-rho (u - x)) Q(du)."""
        raise NotImplementedError

    def exp_tail_tail(self, rho: float, x) -> np.ndarray:
        """int_x^inf exp(-rho (u - x)) Qbar(u) du."""
        raise NotImplementedError

    def total_mass(self) -> float:
        """Q((0, inf)); inf for infinite-activity measures."""
        raise NotImplementedError

    def default_x_max(self) -> float:
        """Smallest x with Qbar(x) < 1e-12 * Qbar(1e-3) (jump-support cutoff)."""
        target = 1e-12 * float(self.tail(1e-3))
        hi = 1.0
        while float(self.tail(hi)) >= target:
            hi *= 2.0
            if hi > 1e9:
                return hi
        return find_root_bracketed(
            lambda x: float(self.tail(x)) - target, 1e-3, hi, tol=abs(target)
        )


class GammaMeasure(LevyMeasureView):
    """Q(dx) = alpha x^-1 exp(-x/xi) dx."""

    def __init__(self, alpha: float, xi: float):
        self.alpha = alpha
        self.xi = xi

    def density(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            out = np.where(x > 0, self.alpha / x * np.exp(-x / self.xi), 0.0)
        return out

    def tail(self, x):
        x = np.asarray(x, dtype=float)
        return self.alpha * exp1(x / self.xi)

    def partial_moment(self, x):
        x = np.asarray(x, dtype=float)
        return self.alpha * self.xi * (-np.expm1(-x / self.xi))

    def exp_tail(self, rho, x):
        x = np.asarray(x, dtype=float)
        z = x * (rho + 1.0 / self.xi)
        return self.alpha * np.exp(-x / self.xi) * _e1_scaled(z)

    def exp_tail_tail(self, rho, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        zero = x <= 0
        # int_0^inf e^{-rho u} Qbar(u) du = alpha/rho * log(1 + rho*xi)
        out[zero] = self.alpha / rho * math.log1p(rho * self.xi)
        if (~zero).any():
            xs = x[~zero]
            z1 = xs / self.xi
            z2 = xs * (rho + 1.0 / self.xi)
            # (alpha/rho) [E1(x/xi) - e^{rho x} E1(x (rho + 1/xi))], scaled form
            out[~zero] = (
                self.alpha
                / rho
                * np.exp(-z1)
                * (_e1_scaled(z1) - _e1_scaled(z2))
            )
        return out

    def total_mass(self) -> float:
        return math.inf


class PHMeasure(LevyMeasureView):
    """Q(dx) = lam * alpha exp(x T) t dx (finite activity)."""

    def __init__(self, lam: float, ph: PhaseType):
        self.lam = lam
        self.ph = ph

    def density(self, x):
        return self.lam * self.ph.density(x)

    def tail(self, x):
        return self.lam * self.ph.survival(x)

    def partial_moment(self, x):
        x = np.asarray(x, dtype=float)
        minus_t_inv_one = np.linalg.solve(-self.ph.t_mat, np.ones(self.ph.order))
        m1 = float(self.ph.alpha @ minus_t_inv_one)
        surv = self.ph.front_action(x, np.ones(self.ph.order))
        rest = self.ph.front_action(x, minus_t_inv_one)
        return self.lam * (m1 - x * surv - rest)

    def exp_tail(self, rho, x):
        m = self.ph.order
        rear = np.linalg.solve(rho * np.eye(m) - self.ph.t_mat, self.ph.exit_vector)
        return self.lam * self.ph.front_action(x, rear)

    def exp_tail_tail(self, rho, x):
        m = self.ph.order
        rear = np.linalg.solve(rho * np.eye(m) - self.ph.t_mat, np.ones(m))
        return self.lam * self.ph.front_action(x, rear)

    def total_mass(self) -> float:
        return self.lam * float(self.ph.alpha.sum())


def levy_measure(model: ModelSpec) -> LevyMeasureView:
    """Jump-measure view of a model; NoJumpPart for Brownian drift."""
    return model.levy_measure()


# ---------------------------------------------------------------------------
# Compound-Poisson approximation (jumps below 1/n discarded)


@dataclass(frozen=True)
class CPApprox:
    level: int
    lambda_n: float
    jump_cdf: GridFunction  # P_n on [1/n, x_max]

    def phi(self, model: ModelSpec, u) -> np.ndarray:
        """Laplace exponent of the truncated model (exact, not grid-based)."""
        view = model.levy_measure()
        eps = 1.0 / self.level
        u = np.atleast_1d(np.asarray(u, dtype=float))
        jump = np.exp(-u * eps) * np.array(
            [float(view.exp_tail(ui, eps)) for ui in u]
        ) - self.lambda_n
        return -model.mu * u + 0.5 * (model.sigma * u) ** 2 + jump


def cp_approximation(
    model: ModelSpec, n: int, x_max: float | None = None, points: int = 2048
) -> CPApprox:
    """Level-n compound-Poisson approximation: intensity Qbar(1/n), jump cdf

    P_n(x) = (Qbar(1/n) - Qbar(x)) / Qbar(1/n) for x >= 1/n, else 0.
    """
    if n < 1:
        raise ValueError("approximation level must be >= 1")
    view = model.levy_measure()
    eps = 1.0 / n
    lam_n = float(view.tail(eps))
    if x_max is None:
        x_max = float(view.default_x_max())
    h = (x_max - eps) / (points - 1)
    xs = eps + h * np.arange(points)
    vals = (lam_n - view.tail(xs)) / lam_n
    vals = np.clip(vals, 0.0, 1.0)
    cdf = GridFunction(eps, h, vals, extrapolate="clip")
    return CPApprox(level=n, lambda_n=lam_n, jump_cdf=cdf)


# ---------------------------------------------------------------------------
# JSON ingest


def _need(doc: dict, key: str, typ, where: str):
    if key not in doc:
        raise SchemaError(f"{where}.{key}: missing")
    val = doc[key]
    if typ is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise SchemaError(f"{where}.{key}: expected number, got {type(val).__name__}")
        return float(val)
    if not isinstance(val, typ):
        raise SchemaError(f"{where}.{key}: expected {typ.__name__}, got {type(val).__name__}")
    return val


def _matrix(doc, key: str, where: str) -> np.ndarray:
    raw = _need(doc, key, list, where)
    rows = []
    for i, row in enumerate(raw):
        if not isinstance(row, list):
            raise SchemaError(f"{where}.{key}[{i}]: expected row (list of numbers)")
        for j, v in enumerate(row):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise SchemaError(f"{where}.{key}[{i}][{j}]: expected number")
        rows.append([float(v) for v in row])
    return np.asarray(rows)


def model_from_dict(doc: dict, where: str = "$") -> ModelSpec:
    if not isinstance(doc, dict):
        raise SchemaError(f"{where}: expected object")
    kind = _need(doc, "kind", str, where)
    if kind not in ALL_KINDS:
        raise SchemaError(f"{where}.kind: unknown kind {kind!r}, expected one of {ALL_KINDS}")
    mu = float(doc.get("mu", 0.0))
    sigma = _need(doc, "sigma", float, where) if kind != KIND_PURE_GAMMA else float(doc.get("sigma", 0.0))
    try:
        if kind == KIND_BROWNIAN:
            return ModelSpec(kind=kind, mu=mu, sigma=sigma)
        if kind in _GAMMA_KINDS:
            alpha = _need(doc, "alpha", float, where)
            xi = _need(doc, "xi", float, where)
            return ModelSpec(kind=kind, mu=mu, sigma=sigma, alpha=alpha, xi=xi)
        lam = _need(doc, "lambda", float, where)
        ph_doc = _need(doc, "ph", dict, where)
        alpha_vec = _need(ph_doc, "alpha", list, f"{where}.ph")
        for i, v in enumerate(alpha_vec):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise SchemaError(f"{where}.ph.alpha[{i}]: expected number")
        t_mat = _matrix(ph_doc, "T", f"{where}.ph")
        ph = PhaseType(np.asarray([float(v) for v in alpha_vec]), t_mat)
        return ModelSpec(kind=kind, mu=mu, sigma=sigma, lam=lam, ph=ph)
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from exc


def model_from_json(text: str) -> ModelSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    return model_from_dict(doc)


def model_to_dict(model: ModelSpec) -> dict:
    doc: dict = {"kind": model.kind, "mu": model.mu, "sigma": model.sigma}
    if model.kind in _GAMMA_KINDS:
        doc["alpha"] = model.alpha
        doc["xi"] = model.xi
    elif model.kind == KIND_PH:
        doc["lambda"] = model.lam
        doc["ph"] = {
            "alpha": model.ph.alpha.tolist(),
            "T": model.ph.t_mat.tolist(),
        }
    return doc

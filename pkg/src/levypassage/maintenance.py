"""Inspection/maintenance policy calculus.

A component degrades like D between inspections.  Inspections happen after
m(state); if the (virtually continued) process has already made its last
passage above the failure threshold b, the system is declared failed and
reset to 0, otherwise the state is mapped through the maintenance function
d.  The cycle kernels are

    A(x, dy) = [1 - esc(d^{-1}(y) - b)] f_{m(x)}(d^{-1}(y) - x) / d'(d^{-1}(y)) dy
    C(y)     = int_{b-y}^inf esc(a - (b - y)) f_{m(y)}(a) da
    Cz(y, z) = same as C with horizon m(y) - z   (= C(y) * C_r(y, z))

with f_t the increment density of D over [0, t] and esc(z) = 1 - e^{-rho(0) z}
the never-return probability.  Because failure is decided by the escape test
at the end-of-cycle value, the policy Monte Carlo can sample cycle endpoints
from their exact laws; a skeleton mode adds the within-cycle last-contact
time needed for idle-time statistics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import (
    ConditioningOnNull,
    HorizonExceeded,
    NonBijectiveMaintenance,
    SchemaError,
)
from .last_passage import density_of_dt, perturbed_gamma_density
from .lundberg import escape_probability, escape_rate
from .mc import SimResult, _bridge_min, _step_jumps, _substream, increment_exact, _mean_result
from .models import (
    KIND_BROWNIAN,
    KIND_PERTURBED_GAMMA,
    KIND_PH,
    KIND_PURE_GAMMA,
    ModelSpec,
)

_T_FLOOR = 1e-6  # degenerate-density floor for z -> m(y)


# ---------------------------------------------------------------------------
# Policy specification


@dataclass(frozen=True)
class InspectionSchedule:
    """Nonincreasing inter-inspection interval m(state) > 0."""

    family: str  # "constant" | "affine" | "exponential"
    value: float = 1.0  # constant value / affine c0 / exponential m0
    slope: float = 0.0  # affine c1 / exponential kappa
    floor: float = 0.05  # lower clamp m_min

    def __post_init__(self):
        if self.family not in ("constant", "affine", "exponential"):
            raise ValueError(f"unknown inspection family {self.family!r}")
        if self.value <= 0 or self.slope < 0 or self.floor <= 0:
            raise ValueError("inspection schedule needs value > 0, slope >= 0, floor > 0")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "constant":
            out = np.full_like(x, self.value)
        elif self.family == "affine":
            out = np.maximum(self.floor, self.value - self.slope * x)
        else:
            out = self.value * np.exp(-self.slope * np.clip(x, 0.0, None)) + self.floor
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class MaintenanceAction:
    """State map applied on survival: affine d(x) = theta x + d0 (bijective)
    or "reset" (constant d0, perfect repair)."""

    family: str  # "affine" | "reset"
    theta: float = 1.0
    d0: float = 0.0

    def __post_init__(self):
        if self.family not in ("affine", "reset"):
            raise ValueError(f"unknown maintenance family {self.family!r}")
        if self.family == "affine" and self.theta <= 0:
            raise NonBijectiveMaintenance("affine maintenance needs theta > 0")

    @property
    def bijective(self) -> bool:
        return self.family == "affine"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.theta * x + self.d0 if self.family == "affine" else np.full_like(x, self.d0)
        return out if out.ndim else float(out)

    def inverse(self, y):
        if not self.bijective:
            raise NonBijectiveMaintenance("reset maintenance has no inverse")
        y = np.asarray(y, dtype=float)
        out = (y - self.d0) / self.theta
        return out if out.ndim else float(out)

    def derivative(self, y):
        if not self.bijective:
            raise NonBijectiveMaintenance("reset maintenance has no derivative")
        y = np.asarray(y, dtype=float)
        out = np.full_like(y, self.theta)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class PolicySpec:
    b: float
    m: InspectionSchedule
    d: MaintenanceAction

    def __post_init__(self):
        if self.b <= 0:
            raise ValueError("failure threshold must be positive")
        # sampled sanity checks of the declared shapes
        xs = np.linspace(-2.0 * self.b, 4.0 * self.b, 64)
        ms = self.m(xs)
        if np.any(ms <= 0) or np.any(np.diff(ms) > 1e-12):
            raise ValueError("inspection interval must be positive and nonincreasing")
        if self.d.bijective:
            back = self.d.inverse(self.d(xs))
            if np.max(np.abs(back - xs)) > 1e-10:
                raise NonBijectiveMaintenance("d_inverse(d(x)) != x")


def policy_from_dict(doc: dict, where: str = "$") -> PolicySpec:
    if not isinstance(doc, dict):
        raise SchemaError(f"{where}: expected object")
    try:
        b = float(doc["b"])
    except (KeyError, TypeError, ValueError):
        raise SchemaError(f"{where}.b: missing or not a number") from None
    m_doc = doc.get("m")
    d_doc = doc.get("d")
    if not isinstance(m_doc, dict):
        raise SchemaError(f"{where}.m: expected object")
    if not isinstance(d_doc, dict):
        raise SchemaError(f"{where}.d: expected object")
    try:
        m = InspectionSchedule(
            family=m_doc.get("family", "constant"),
            value=float(m_doc.get("value", 1.0)),
            slope=float(m_doc.get("slope", 0.0)),
            floor=float(m_doc.get("floor", 0.05)),
        )
        d = MaintenanceAction(
            family=d_doc.get("family", "affine"),
            theta=float(d_doc.get("theta", 1.0)),
            d0=float(d_doc.get("d0", 0.0)),
        )
        return PolicySpec(b=b, m=m, d=d)
    except (ValueError, NonBijectiveMaintenance) as exc:
        raise SchemaError(f"{where}: {exc}") from exc


def policy_from_json(text: str) -> PolicySpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    return policy_from_dict(doc)


# ---------------------------------------------------------------------------
# Increment densities


def increment_density(model: ModelSpec, t: float, a) -> np.ndarray:
    """Density of D_t - D_0 evaluated at a (vectorized)."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    t = max(t, _T_FLOOR)
    if model.kind == KIND_BROWNIAN:
        return norm.pdf(a, loc=model.mu * t, scale=model.sigma * math.sqrt(t))
    if model.kind == KIND_PERTURBED_GAMMA:
        return perturbed_gamma_density(model, t, a)
    if model.kind == KIND_PURE_GAMMA:
        from scipy.stats import gamma as gamma_dist

        return gamma_dist.pdf(a - model.mu * t, model.alpha * t, scale=model.xi)
    dens = density_of_dt(model, t)
    return dens(a)


# ---------------------------------------------------------------------------
# Cycle kernels


class PolicyKernels:
    """A, C and the idle-time survivor for one (model, policy) pair."""

    def __init__(self, model: ModelSpec, policy: PolicySpec, rho0: float | None = None):
        self.model = model
        self.policy = policy
        self.rho0 = escape_rate(model) if rho0 is None else rho0
        self._dens_cache: dict[float, object] = {}

    def _density(self, t: float):
        key = round(max(t, _T_FLOOR), 12)
        if key not in self._dens_cache:
            self._dens_cache[key] = density_of_dt(self.model, key)
        return self._dens_cache[key]

    def _inc_density(self, t: float, a) -> np.ndarray:
        if self.model.kind == KIND_PH:
            return self._density(t)(a)
        return increment_density(self.model, t, a)

    def kernel_a(self, x: float, y) -> np.ndarray:
        """Density of [no failure this cycle, next state in dy] from state x."""
        d = self.policy.d
        if not d.bijective:
            raise NonBijectiveMaintenance(
                "the change-of-variables kernel needs a bijective maintenance map"
            )
        y = np.atleast_1d(np.asarray(y, dtype=float))
        a = d.inverse(y)  # end-of-cycle degradation level
        t = float(self.policy.m(x))
        surv = 1.0 - escape_probability(a - self.policy.b, self.rho0)
        dens = self._inc_density(t, a - x)
        return surv * dens / d.derivative(y)

    def kernel_c(self, y: float, horizon: float | None = None) -> float:
        """Failure probability before the next inspection from state y."""
        t = float(self.policy.m(y)) if horizon is None else horizon
        t = max(t, _T_FLOOR)
        dens = self._density(t)
        lo = self.policy.b - y
        hi = dens.f.x_max
        if hi <= lo:
            return 0.0
        xs = np.linspace(lo, hi, 2049)
        vals = escape_probability(xs - lo, self.rho0) * dens(xs)
        return float(np.trapezoid(vals, xs))

    def kernel_cz(self, y: float, z: float) -> float:
        """Unconditional idle-time survivor P[m(y) - L >= z, failure] from y."""
        t = float(self.policy.m(y))
        if z < 0 or z > t:
            raise ValueError("idle time must lie in [0, m(y)]")
        return self.kernel_c(y, horizon=t - z)

    def kernel_cr(self, y: float, z: float) -> float:
        """Conditional idle-time survivor C_r(y, z) = Cz(y, z) / C(y)."""
        c = self.kernel_c(y)
        if c < 1e-12:
            raise ConditioningOnNull(f"C({y:g}) = {c:.2e} is numerically zero")
        return self.kernel_cz(y, z) / c

    # -- state grid and chain products

    def default_state_grid(self, i_max: int = 8, n: int = 512) -> np.ndarray:
        """Grid spanning the reachable post-maintenance states over i_max cycles."""
        d, m = self.policy.d, self.policy.m
        t_widest = float(m(min(0.0, -2.0 * self.policy.b)))
        dens = self._density(t_widest)
        cdf = np.concatenate(([0.0], np.cumsum(dens.f.values[:-1] + dens.f.values[1:]))) * (
            dens.f.h / 2.0
        )
        grid = dens.grid()
        inc_lo = float(np.interp(1e-10, cdf, grid))
        inc_hi = float(np.interp(cdf[-1] - 1e-10, cdf, grid))
        lo = hi = 0.0
        for _ in range(i_max):
            lo, hi = min(lo, float(d(lo + inc_lo))), max(hi, float(d(hi + inc_hi)))
        return np.linspace(lo, hi, n)

    def chain(self, i_max: int, state_grid: np.ndarray | None = None):
        """Forward state densities rho_k and time-weighted companions tau_k.

        rho_k(y) dy = P[I > k, X_{U_k} in dy] for k >= 1; returns also the
        per-level failure masses P[I = i] for i = 1..i_max and the expected
        accumulated inspection times E[T* 1{I=i}].
        """
        if not self.policy.d.bijective:
            return self._chain_reset(i_max)
        ys = self.default_state_grid(i_max) if state_grid is None else state_grid
        wts = np.full(ys.size, ys[1] - ys[0])
        wts[0] *= 0.5
        wts[-1] *= 0.5
        c_vals = np.array([self.kernel_c(float(y)) for y in ys])
        m_vals = np.asarray(self.policy.m(ys))
        m0 = float(self.policy.m(0.0))
        c0 = self.kernel_c(0.0)
        p_fail = [c0]
        e_time = [m0 * c0]
        rho = self.kernel_a(0.0, ys)
        tau = m0 * rho  # E of accumulated time density
        rows = None
        for _ in range(2, i_max + 1):
            p_fail.append(float(np.sum(rho * wts * c_vals)))
            e_time.append(float(np.sum((tau + m_vals * rho) * wts * c_vals)))
            if rows is None:
                rows = np.stack([self.kernel_a(float(y), ys) for y in ys])
            new_rho = (rho * wts) @ rows
            new_tau = ((tau + m_vals * rho) * wts) @ rows
            rho, tau = new_rho, new_tau
        return np.asarray(p_fail), np.asarray(e_time), ys, rho

    def _chain_reset(self, i_max: int):
        d0 = float(self.policy.d(0.0))
        c0 = self.kernel_c(0.0)
        cd = self.kernel_c(d0)
        m0 = float(self.policy.m(0.0))
        md = float(self.policy.m(d0))
        p_fail = [c0]
        e_time = [m0 * c0]
        surv = 1.0 - c0
        t_acc = m0
        for _ in range(2, i_max + 1):
            p_fail.append(surv * cd)
            e_time.append((t_acc + md) * cd * surv)
            t_acc += md
            surv *= 1.0 - cd
        return np.asarray(p_fail), np.asarray(e_time), np.array([d0]), None


def joint_law_i_states(kernels: PolicyKernels, i: int, state_grid=None):
    """P[I = i] and the surviving-state density entering the failing cycle."""
    if i < 1:
        raise ValueError("cycle index starts at 1")
    p_fail, _, ys, _ = kernels.chain(i, state_grid)
    return float(p_fail[i - 1]), ys


def joint_law_idle(kernels: PolicyKernels, i: int, z: float, state_grid=None) -> float:
    """P[idle > z, I = i]: the chain with the final factor Cz(y, z)."""
    if i < 1:
        raise ValueError("cycle index starts at 1")
    if not kernels.policy.d.bijective:
        d0 = float(kernels.policy.d(0.0))
        if i == 1:
            return kernels.kernel_cz(0.0, z)
        surv = 1.0 - kernels.kernel_c(0.0)
        cd = kernels.kernel_c(d0)
        return surv * (1.0 - cd) ** (i - 2) * kernels.kernel_cz(d0, z)
    ys = kernels.default_state_grid(i) if state_grid is None else state_grid
    if i == 1:
        return kernels.kernel_cz(0.0, z)
    wts = np.full(ys.size, ys[1] - ys[0])
    wts[0] *= 0.5
    wts[-1] *= 0.5
    rho = kernels.kernel_a(0.0, ys)
    if i > 2:
        rows = np.stack([kernels.kernel_a(float(y), ys) for y in ys])
        for _ in range(i - 2):
            rho = (rho * wts) @ rows
    cz = np.array([kernels.kernel_cz(float(y), z) for y in ys])
    return float(np.sum(rho * wts * cz))


def expected_time_to_renewal(kernels: PolicyKernels, i: int, state_grid=None) -> float:
    """E[T* 1{I=i}] with T* = m(0) + m(y_1) + ... + m(y_{i-1})."""
    if i < 1:
        raise ValueError("cycle index starts at 1")
    _, e_time, _, _ = kernels.chain(i, state_grid)
    return float(e_time[i - 1])


# ---------------------------------------------------------------------------
# Policy Monte Carlo


@dataclass(frozen=True)
class PolicySimResult:
    n: int
    i_of_path: np.ndarray  # failing cycle index per path
    t_star: np.ndarray  # regeneration time per path
    idle: np.ndarray | None  # idle time per path (skeleton mode only)

    def p_i(self, i: int) -> SimResult:
        return _mean_result((self.i_of_path == i).astype(float), f"P(I={i})")

    def mean_t_star(self) -> SimResult:
        return _mean_result(self.t_star, "E[T*]")

    def e_t_star_on_i(self, i: int) -> SimResult:
        vals = np.where(self.i_of_path == i, self.t_star, 0.0)
        return _mean_result(vals, f"E[T*; I={i}]")

    def p_idle_joint(self, i: int, z: float) -> SimResult:
        if self.idle is None:
            raise ValueError("idle statistics need skeleton mode")
        vals = ((self.i_of_path == i) & (self.idle > z)).astype(float)
        return _mean_result(vals, f"P(idle>{z:g}, I={i})")


def simulate_policy(
    model: ModelSpec,
    policy: PolicySpec,
    n_paths: int,
    seed: int = 0,
    idle_mode: bool = False,
    steps_per_cycle: int = 256,
    max_cycles: int = 10_000,
    stream: int = 7,
) -> PolicySimResult:
    """Simulate renewal cycles of the maintained component.

    Failure within a cycle is decided by the exact escape Bernoulli test at
    the end-of-cycle value, so plain mode samples cycle endpoints from their
    exact laws.  ``idle_mode`` simulates a within-cycle skeleton to record
    the last time at or below the threshold (idle time = cycle end - last
    contact), at O(steps_per_cycle) extra cost.
    """
    if n_paths < 1:
        raise ValueError("need at least one path")
    rho0 = escape_rate(model)
    rng = _substream(seed, stream, 0)
    b = policy.b
    x = np.zeros(n_paths)
    t_star = np.zeros(n_paths)
    i_of_path = np.zeros(n_paths, dtype=np.int64)
    idle = np.full(n_paths, np.nan) if idle_mode else None
    idx = np.arange(n_paths)
    for cycle in range(1, max_cycles + 1):
        m = idx.size
        if m == 0:
            break
        horizons = np.asarray(policy.m(x), dtype=float)
        if idle_mode:
            v, last_contact = _cycle_skeleton(
                model, rng, x, horizons, b, steps_per_cycle
            )
        else:
            v = x + increment_exact(model, rng, horizons)
            last_contact = None
        t_star[idx] += horizons
        esc_p = escape_probability(v - b, rho0)
        fail = rng.random(m) < esc_p
        if fail.any():
            gi = idx[fail]
            i_of_path[gi] = cycle
            if idle_mode:
                idle[gi] = (horizons - last_contact)[fail]
        keep = ~fail
        x = np.asarray(policy.d(v[keep]))
        idx = idx[keep]
    if idx.size:
        raise HorizonExceeded(f"{idx.size} paths exceeded {max_cycles} cycles")
    return PolicySimResult(n_paths, i_of_path, t_star, idle)


def _cycle_skeleton(model, rng, x, horizons, b, steps):
    """Cycle endpoints plus last in-cycle contact time with (-inf, b]."""
    m = x.size
    dt = horizons / steps
    v = x.copy()
    last_contact = np.where(x <= b, 0.0, np.nan)
    var_dt = (model.sigma**2) * dt
    for k in range(1, steps + 1):
        c_end = v + model.mu * dt
        if model.sigma > 0:
            c_end = c_end + rng.normal(0.0, np.sqrt(var_dt))
        if model.sigma > 0:
            m_min = _bridge_min(rng, v, c_end, var_dt)
        else:
            m_min = np.minimum(v, c_end)
        contact = m_min <= b
        last_contact[contact] = (k * dt)[contact]
        v = c_end + _step_jumps(model, rng, m, dt)
    # paths that never touched the threshold from above: treat the cycle start
    # as the reference point (flagged by the caller via NaN -> full horizon)
    nan = np.isnan(last_contact)
    last_contact[nan] = 0.0
    return v, last_contact

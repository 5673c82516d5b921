"""Monte Carlo oracle: exact-increment path simulation for all model kinds.

Increments are sampled from their exact laws per step (Gaussian, gamma,
compound Poisson with phase-type sizes); the within-step diffusion extremes
use Brownian-bridge corrections, so level crossings by the continuous part
are detected without refining dt.  Last-passage estimators finish each path
with the exact escape Bernoulli test P(never return below b | value v) =
1 - e^{-rho(0)(v-b)}, which removes the infinite-horizon problem without
bias.

Paths are simulated in deterministic batches with counter-based Philox
substreams keyed by (seed, stream, batch), so results are reproducible
regardless of batch size or parallel scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EscapeTestUnavailable, HorizonExceeded
from .lundberg import escape_probability, escape_rate
from .models import (
    KIND_BROWNIAN,
    KIND_PERTURBED_GAMMA,
    KIND_PH,
    KIND_PURE_GAMMA,
    ModelSpec,
    PhaseType,
)

EXIT_NONE = 0
EXIT_CREEP = 1
EXIT_JUMP = 2


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    t_max: float = 8.0  # horizon per block; open-ended estimators chain blocks
    n_paths: int = 10_000
    seed: int = 0
    bridge_correction: bool = True
    max_blocks: int = 64
    batch_size: int = 100_000

    def __post_init__(self):
        if self.dt <= 0 or self.t_max < self.dt or self.n_paths < 1:
            raise ValueError("need dt > 0, t_max >= dt, n_paths >= 1")


@dataclass(frozen=True)
class SimResult:
    estimate: float
    std_error: float
    n: int
    meta: str = ""
    extra: dict = field(default_factory=dict)

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.estimate - target) <= k * max(self.std_error, 1e-300)


def _substream(seed: int, stream: int, batch: int) -> np.random.Generator:
    key = np.array(
        [np.uint64(seed & (2**64 - 1)), np.uint64(((stream & 0xFFFF) << 32) | (batch & 0xFFFFFFFF))],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def _mean_result(values: np.ndarray, meta: str, extra: dict | None = None) -> SimResult:
    n = values.size
    est = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return SimResult(est, se, n, meta, extra or {})


def sample_phase_type(ph: PhaseType, rng: np.random.Generator, size: int) -> np.ndarray:
    """Exact phase-type samples by simulating the absorbing phase chain."""
    m = ph.order
    rates = -np.diag(ph.t_mat)
    # transition kernel rows: to the other phases then to absorption
    probs = np.empty((m, m + 1))
    for i in range(m):
        row = ph.t_mat[i].copy()
        row[i] = 0.0
        probs[i, :m] = row / rates[i]
        probs[i, m] = ph.exit_vector[i] / rates[i]
    cum = np.cumsum(probs, axis=1)
    start = np.concatenate((ph.alpha, [max(0.0, 1.0 - ph.alpha.sum())]))
    start = start / start.sum()
    state = rng.choice(m + 1, p=start, size=size)
    total = np.zeros(size)
    active = state < m
    guard = 0
    while active.any():
        guard += 1
        if guard > 100_000:
            raise HorizonExceeded("phase chain failed to absorb")
        s = state[active]
        total[active] += rng.exponential(1.0 / rates[s])
        u = rng.random(s.size)
        nxt = (u[:, None] > cum[s]).sum(axis=1)
        state[active] = nxt
        active = state < m
    return total


def _step_jumps(model: ModelSpec, rng: np.random.Generator, m: int, dt) -> np.ndarray:
    """Jump-part increment over one step (exact in law, lumped at step end)."""
    dt = np.broadcast_to(np.asarray(dt, dtype=float), (m,))
    if model.kind == KIND_BROWNIAN:
        return np.zeros(m)
    if model.kind in (KIND_PURE_GAMMA, KIND_PERTURBED_GAMMA):
        return rng.gamma(model.alpha * dt, model.xi)
    counts = rng.poisson(model.lam * dt)
    total = int(counts.sum())
    out = np.zeros(m)
    if total:
        sizes = sample_phase_type(model.ph, rng, total)
        idx = np.repeat(np.arange(m), counts)
        out = np.bincount(idx, weights=sizes, minlength=m)
    return out


def increment_exact(model: ModelSpec, rng: np.random.Generator, t) -> np.ndarray:
    """Exact sample of D_t - D_0 for an array of horizons t (one per path)."""
    t = np.asarray(t, dtype=float)
    m = t.size
    out = model.mu * t + _step_jumps(model, rng, m, t)
    if model.sigma > 0:
        out = out + rng.normal(0.0, model.sigma * np.sqrt(t))
    return out


def _bridge_min(rng, v0, v1, var_dt):
    """Sample the minimum of a Brownian bridge between v0 and v1."""
    u = rng.random(v0.size)
    return 0.5 * (v0 + v1 - np.sqrt((v0 - v1) ** 2 - 2.0 * var_dt * np.log(u)))


def _cross_up_prob(v0, v1, level, var_dt):
    """P(continuous bridge from v0 to v1 exceeds level), both endpoints below."""
    return np.exp(-2.0 * np.clip(level - v0, 0.0, None) * np.clip(level - v1, 0.0, None) / var_dt)


def sample_path(model: ModelSpec, cfg: SimConfig, stream: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """One skeleton path (times, values) on [0, t_max] at resolution dt."""
    rng = _substream(cfg.seed, stream, 0)
    steps = int(round(cfg.t_max / cfg.dt))
    times = cfg.dt * np.arange(steps + 1)
    vals = np.empty(steps + 1)
    vals[0] = 0.0
    cont = model.mu * cfg.dt + (
        rng.normal(0.0, model.sigma * math.sqrt(cfg.dt), steps) if model.sigma > 0 else 0.0
    )
    jumps = _step_jumps(model, rng, steps, cfg.dt)
    vals[1:] = np.cumsum(cont + jumps)
    return times, vals


def reflected_path(model: ModelSpec, cfg: SimConfig, stream: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """One skeleton path of D* = D - inf(D ^ 0) (running-infimum reflection)."""
    times, vals = sample_path(model, cfg, stream)
    run_inf = np.minimum.accumulate(np.minimum(vals, 0.0))
    return times, vals - run_inf


# ---------------------------------------------------------------------------
# First passage of the free process


@dataclass(frozen=True)
class FirstPassageSample:
    b: float
    t_cross: np.ndarray  # +inf when censored
    exit_kind: np.ndarray
    undershoot: np.ndarray  # b - D(T-), 0 for creeping
    overshoot: np.ndarray  # D(T) - b, 0 for creeping
    horizon: float

    @property
    def n(self) -> int:
        return self.t_cross.size

    def cdf_at(self, t: float) -> SimResult:
        return _mean_result((self.t_cross <= t).astype(float), f"P(T_b<= {t:g})")

    def laplace_at(self, delta: float) -> SimResult:
        vals = np.where(np.isfinite(self.t_cross), np.exp(-delta * self.t_cross), 0.0)
        extra = {"censored": int(np.sum(~np.isfinite(self.t_cross)))}
        return _mean_result(vals, f"E[e^(-{delta:g} T_b)]", extra)

    def penalty_laplace(self, delta: float, eps: float) -> SimResult:
        """E[e^{-delta T_b} 1{overshoot > eps}]."""
        ind = (self.exit_kind == EXIT_JUMP) & (self.overshoot > eps)
        vals = np.where(
            ind & np.isfinite(self.t_cross), np.exp(-delta * self.t_cross), 0.0
        )
        return _mean_result(vals, f"E[e^(-{delta:g} T_b); w>{eps:g}]")

    def penalty_value(self, delta: float, w) -> SimResult:
        """E[e^{-delta T_b} w(undershoot, overshoot)]; creeping paths carry
        w(0, 0) since they cross with zero under- and overshoot."""
        ok = np.isfinite(self.t_cross)
        weights = np.asarray(w(self.undershoot, self.overshoot), dtype=float)
        vals = np.where(ok, np.exp(-delta * np.where(ok, self.t_cross, 0.0)) * weights, 0.0)
        return _mean_result(vals, f"E[e^(-{delta:g} T_b) w]")

    def jump_crossing_prob(self) -> SimResult:
        return _mean_result((self.exit_kind == EXIT_JUMP).astype(float), "P(cross by jump)")


def run_first_passage(model: ModelSpec, cfg: SimConfig, b: float, stream: int = 1) -> FirstPassageSample:
    if b <= 0:
        raise ValueError("threshold must be positive")
    n = cfg.n_paths
    t_cross = np.full(n, np.inf)
    kind = np.zeros(n, dtype=np.int8)
    und = np.zeros(n)
    over = np.zeros(n)
    var_dt = (model.sigma**2) * cfg.dt
    steps = int(round(cfg.t_max / cfg.dt))
    for start in range(0, n, cfg.batch_size):
        m0 = min(cfg.batch_size, n - start)
        rng = _substream(cfg.seed, stream, start // cfg.batch_size)
        idx = np.arange(start, start + m0)
        v = np.zeros(m0)
        for block in range(cfg.max_blocks):
            t0 = block * cfg.t_max
            for k in range(steps):
                m = v.size
                if m == 0:
                    break
                t_end = t0 + (k + 1) * cfg.dt
                c_end = v + model.mu * cfg.dt
                if model.sigma > 0:
                    c_end = c_end + rng.normal(0.0, math.sqrt(var_dt), m)
                post = c_end + _step_jumps(model, rng, m, cfg.dt)
                creep = c_end >= b
                if model.sigma > 0 and cfg.bridge_correction:
                    below = ~creep
                    p = _cross_up_prob(v[below], c_end[below], b, var_dt)
                    hit = rng.random(p.size) < p
                    creep[below] |= hit
                jumpx = ~creep & (post >= b)
                done = creep | jumpx
                if done.any():
                    gi = idx[done]
                    t_cross[gi] = t_end
                    kind[gi] = np.where(creep[done], EXIT_CREEP, EXIT_JUMP)
                    und[gi] = np.where(creep[done], 0.0, b - c_end[done])
                    over[gi] = np.where(creep[done], 0.0, post[done] - b)
                    keep = ~done
                    v, idx = post[keep], idx[keep]
                else:
                    v = post
            if idx.size == 0:
                break
    return FirstPassageSample(b, t_cross, kind, und, over, cfg.t_max * cfg.max_blocks)


def estimate_first_passage(
    model: ModelSpec,
    cfg: SimConfig,
    b: float,
    functional: str = "laplace",
    t: float | None = None,
    delta: float | None = None,
    eps: float = 0.0,
    stream: int = 1,
) -> SimResult:
    """One-shot estimator; functional in {"cdf", "laplace", "penalty", "jump_prob"}."""
    sample = run_first_passage(model, cfg, b, stream)
    if functional == "cdf":
        return sample.cdf_at(t)
    if functional == "laplace":
        return sample.laplace_at(delta)
    if functional == "penalty":
        return sample.penalty_laplace(delta, eps)
    if functional == "jump_prob":
        return sample.jump_crossing_prob()
    raise ValueError(f"unknown functional {functional!r}")


# ---------------------------------------------------------------------------
# Last passage of the free process


@dataclass(frozen=True)
class LastPassageSample:
    b: float
    l_last: np.ndarray  # last time at or below b (dt resolution); NaN if censored
    exit_kind: np.ndarray
    undershoot: np.ndarray  # b - D(L-) for jump exits
    overshoot: np.ndarray  # D(L) - b for jump exits
    censored: int

    @property
    def n(self) -> int:
        return self.l_last.size

    def cdf_at(self, t: float) -> SimResult:
        ok = np.isfinite(self.l_last)
        return _mean_result(
            (self.l_last[ok] < t).astype(float), f"P(L_b< {t:g})", {"censored": self.censored}
        )

    def laplace_at(self, delta: float) -> SimResult:
        ok = np.isfinite(self.l_last)
        return _mean_result(np.exp(-delta * self.l_last[ok]), f"E[e^(-{delta:g} L_b)]")

    def jump_crossing_prob(self) -> SimResult:
        ok = np.isfinite(self.l_last)
        return _mean_result(
            (self.exit_kind[ok] == EXIT_JUMP).astype(float), "P(last crossing by jump)"
        )


def run_last_passage(
    model: ModelSpec,
    cfg: SimConfig,
    b: float,
    rho0: float | None = None,
    stream: int = 2,
) -> LastPassageSample:
    """Simulate until the exact escape test accepts; unbiased for L_b laws."""
    if b <= 0:
        raise ValueError("threshold must be positive")
    if rho0 is None:
        if model.sigma == 0:
            rho0 = math.inf
        else:
            try:
                rho0 = escape_rate(model)
            except Exception as exc:  # pragma: no cover - defensive
                raise EscapeTestUnavailable(str(exc)) from exc
    n = cfg.n_paths
    l_last = np.full(n, np.nan)
    kind = np.zeros(n, dtype=np.int8)
    und = np.zeros(n)
    over = np.zeros(n)
    censored = 0
    var_dt = (model.sigma**2) * cfg.dt
    steps = int(round(cfg.t_max / cfg.dt))
    for start in range(0, n, cfg.batch_size):
        m0 = min(cfg.batch_size, n - start)
        rng = _substream(cfg.seed, stream, start // cfg.batch_size)
        idx = np.arange(start, start + m0)
        v = np.zeros(m0)
        # state per active path
        last_t = np.zeros(m0)  # start at 0 <= b: contact at time 0
        e_kind = np.full(m0, EXIT_CREEP, dtype=np.int8)
        e_y = np.zeros(m0)
        e_w = np.zeros(m0)
        for block in range(cfg.max_blocks):
            t0 = block * cfg.t_max
            for k in range(steps):
                m = v.size
                if m == 0:
                    break
                t_end = t0 + (k + 1) * cfg.dt
                c_end = v + model.mu * cfg.dt
                if model.sigma > 0:
                    c_end = c_end + rng.normal(0.0, math.sqrt(var_dt), m)
                if model.sigma > 0 and cfg.bridge_correction:
                    m_min = _bridge_min(rng, v, c_end, var_dt)
                else:
                    m_min = np.minimum(v, c_end)
                post = c_end + _step_jumps(model, rng, m, cfg.dt)
                contact = m_min <= b
                if contact.any():
                    last_t[contact] = t_end
                    creep_exit = contact & (c_end > b)
                    jump_exit = contact & (c_end <= b) & (post > b)
                    e_kind[creep_exit] = EXIT_CREEP
                    e_y[creep_exit] = 0.0
                    e_w[creep_exit] = 0.0
                    e_kind[jump_exit] = EXIT_JUMP
                    e_y[jump_exit] = b - c_end[jump_exit]
                    e_w[jump_exit] = post[jump_exit] - b
                v = post
            if v.size == 0:
                break
            # escape test at block end
            above = v > b
            esc_p = np.zeros(v.size)
            esc_p[above] = escape_probability(v[above] - b, rho0)
            escaped = rng.random(v.size) < esc_p
            if escaped.any():
                gi = idx[escaped]
                l_last[gi] = last_t[escaped]
                kind[gi] = e_kind[escaped]
                und[gi] = e_y[escaped]
                over[gi] = e_w[escaped]
                keep = ~escaped
                v, idx = v[keep], idx[keep]
                last_t, e_kind = last_t[keep], e_kind[keep]
                e_y, e_w = e_y[keep], e_w[keep]
        censored += idx.size
    return LastPassageSample(b, l_last, kind, und, over, censored)


def estimate_last_passage(
    model: ModelSpec,
    cfg: SimConfig,
    b: float,
    functional: str = "cdf",
    t: float | None = None,
    delta: float | None = None,
    rho0: float | None = None,
    stream: int = 2,
) -> SimResult:
    sample = run_last_passage(model, cfg, b, rho0, stream)
    if functional == "cdf":
        return sample.cdf_at(t)
    if functional == "laplace":
        return sample.laplace_at(delta)
    if functional == "jump_prob":
        return sample.jump_crossing_prob()
    raise ValueError(f"unknown functional {functional!r}")


# ---------------------------------------------------------------------------
# Reflected process D* = D - inf(D ^ 0)


def run_reflected_marginal(
    model: ModelSpec, cfg: SimConfig, times: np.ndarray, stream: int = 3
) -> np.ndarray:
    """Values of D* at the requested times for every path (rows = paths)."""
    times = np.asarray(times, dtype=float)
    t_final = float(times.max())
    steps = int(round(t_final / cfg.dt))
    record_steps = np.round(times / cfg.dt).astype(int)
    n = cfg.n_paths
    out = np.empty((n, times.size))
    var_dt = (model.sigma**2) * cfg.dt
    for start in range(0, n, cfg.batch_size):
        m = min(cfg.batch_size, n - start)
        rng = _substream(cfg.seed, stream, start // cfg.batch_size)
        v = np.zeros(m)
        run_inf = np.zeros(m)  # inf of (V ^ 0) so far
        col = {int(s): j for j, s in enumerate(record_steps)}
        for k in range(1, steps + 1):
            c_end = v + model.mu * cfg.dt
            if model.sigma > 0:
                c_end = c_end + rng.normal(0.0, math.sqrt(var_dt), m)
            if model.sigma > 0 and cfg.bridge_correction:
                m_min = _bridge_min(rng, v, c_end, var_dt)
            else:
                m_min = np.minimum(v, c_end)
            run_inf = np.minimum(run_inf, m_min)
            v = c_end + _step_jumps(model, rng, m, cfg.dt)
            if k in col:
                out[start : start + m, col[k]] = v - run_inf
    return out


def estimate_reflected_exceedance(
    model: ModelSpec, cfg: SimConfig, b: float, t: float, stream: int = 3
) -> SimResult:
    """P(D*_t > b) by simulation."""
    vals = run_reflected_marginal(model, cfg, np.array([t]), stream)[:, 0]
    return _mean_result((vals > b).astype(float), f"P(D*_{t:g} > {b:g})")


@dataclass(frozen=True)
class ReflectedFirstPassageSample:
    b: float
    t_cross: np.ndarray
    exit_kind: np.ndarray
    pre_level: np.ndarray  # D*(T-) for jump exits
    post_level: np.ndarray  # D*(T) for jump exits

    def laplace_at(self, delta: float) -> SimResult:
        vals = np.where(np.isfinite(self.t_cross), np.exp(-delta * self.t_cross), 0.0)
        return _mean_result(vals, f"E[e^(-{delta:g} T*_b)]")

    def jump_laplace(self, delta: float) -> SimResult:
        ok = np.isfinite(self.t_cross) & (self.exit_kind == EXIT_JUMP)
        vals = np.where(ok, np.exp(-delta * np.where(ok, self.t_cross, 1.0)), 0.0)
        return _mean_result(vals, f"E[e^(-{delta:g} T*_b); jump]")


def run_reflected_first_passage(
    model: ModelSpec, cfg: SimConfig, b: float, stream: int = 4
) -> ReflectedFirstPassageSample:
    if b <= 0:
        raise ValueError("threshold must be positive")
    n = cfg.n_paths
    t_cross = np.full(n, np.inf)
    kind = np.zeros(n, dtype=np.int8)
    pre = np.zeros(n)
    post_l = np.zeros(n)
    var_dt = (model.sigma**2) * cfg.dt
    steps = int(round(cfg.t_max / cfg.dt))
    for start in range(0, n, cfg.batch_size):
        m0 = min(cfg.batch_size, n - start)
        rng = _substream(cfg.seed, stream, start // cfg.batch_size)
        idx = np.arange(start, start + m0)
        v = np.zeros(m0)
        run_inf = np.zeros(m0)
        for block in range(cfg.max_blocks):
            t0 = block * cfg.t_max
            for k in range(steps):
                m = v.size
                if m == 0:
                    break
                t_end = t0 + (k + 1) * cfg.dt
                # crossing level for the free coordinates, using the running
                # infimum before this step (within-step ordering is O(dt))
                ref = np.minimum(run_inf, 0.0)
                level = b + ref
                c_end = v + model.mu * cfg.dt
                if model.sigma > 0:
                    c_end = c_end + rng.normal(0.0, math.sqrt(var_dt), m)
                if model.sigma > 0 and cfg.bridge_correction:
                    m_min = _bridge_min(rng, v, c_end, var_dt)
                else:
                    m_min = np.minimum(v, c_end)
                post = c_end + _step_jumps(model, rng, m, cfg.dt)
                creep = c_end >= level
                if model.sigma > 0 and cfg.bridge_correction:
                    below = ~creep
                    p = _cross_up_prob(v[below], c_end[below], level[below], var_dt)
                    creep[below] |= rng.random(p.size) < p
                jumpx = ~creep & (post >= level)
                done = creep | jumpx
                run_inf = np.minimum(run_inf, m_min)
                if done.any():
                    gi = idx[done]
                    t_cross[gi] = t_end
                    kind[gi] = np.where(creep[done], EXIT_CREEP, EXIT_JUMP)
                    pre[gi] = np.where(creep[done], b, (c_end - ref)[done])
                    post_l[gi] = np.where(creep[done], b, (post - ref)[done])
                    keep = ~done
                    v, idx, run_inf = post[keep], idx[keep], run_inf[keep]
                else:
                    v = post
            if idx.size == 0:
                break
    return ReflectedFirstPassageSample(b, t_cross, kind, pre, post_l)


def run_reflected_at_exp_horizon(
    model: ModelSpec,
    cfg: SimConfig,
    delta: float,
    b: float,
    rho0: float | None = None,
    stream: int = 6,
) -> tuple[np.ndarray, np.ndarray]:
    """(D*_T, indicator[L*_b >= T, D*_T > b]) for independent T ~ Exp(delta).

    [L*_b >= T] given D*_T means the reflected process returns below b after
    T, whose probability is 1 - esc(D*_T - b) when D*_T > b (and 1 if <= b),
    so the joint indicator is resolved by one exact Bernoulli draw.
    """
    rho0 = escape_rate(model) if rho0 is None else rho0
    n = cfg.n_paths
    d_at_t = np.empty(n)
    joint = np.zeros(n)
    var_dt = (model.sigma**2) * cfg.dt
    for start in range(0, n, cfg.batch_size):
        m = min(cfg.batch_size, n - start)
        rng = _substream(cfg.seed, stream, start // cfg.batch_size)
        horizon = rng.exponential(1.0 / delta, m)
        steps_needed = np.maximum(1, np.ceil(horizon / cfg.dt).astype(int))
        max_steps = int(steps_needed.max())
        v = np.zeros(m)
        run_inf = np.zeros(m)
        vals = np.empty(m)
        for k in range(1, max_steps + 1):
            active = steps_needed >= k
            if not active.any():
                break
            ma = int(active.sum())
            c_end = v[active] + model.mu * cfg.dt
            if model.sigma > 0:
                c_end = c_end + rng.normal(0.0, math.sqrt(var_dt), ma)
            if model.sigma > 0 and cfg.bridge_correction:
                m_min = _bridge_min(rng, v[active], c_end, var_dt)
            else:
                m_min = np.minimum(v[active], c_end)
            run_inf[active] = np.minimum(run_inf[active], m_min)
            v[active] = c_end + _step_jumps(model, rng, ma, cfg.dt)
            finished = active & (steps_needed == k)
            vals[finished] = (v - np.minimum(run_inf, 0.0))[finished]
        d_at_t[start : start + m] = vals
        above = vals > b
        u = rng.random(m)
        joint[start : start + m] = above & (
            u >= escape_probability(np.clip(vals - b, 0.0, None), rho0)
        )
    return d_at_t, joint


@dataclass(frozen=True)
class ReflectedLastPassageSample:
    b: float
    l_last: np.ndarray
    censored: int

    def laplace_at(self, delta: float) -> SimResult:
        ok = np.isfinite(self.l_last)
        return _mean_result(
            np.exp(-delta * self.l_last[ok]), f"E[e^(-{delta:g} L*_b)]", {"censored": self.censored}
        )


def run_reflected_last_passage(
    model: ModelSpec,
    cfg: SimConfig,
    b: float,
    rho0: float | None = None,
    stream: int = 5,
) -> ReflectedLastPassageSample:
    """L*_b = last time D* <= b; escape test applies unchanged above b > 0."""
    if b <= 0:
        raise ValueError("threshold must be positive")
    rho0 = escape_rate(model) if rho0 is None else rho0
    n = cfg.n_paths
    l_last = np.full(n, np.nan)
    censored = 0
    var_dt = (model.sigma**2) * cfg.dt
    steps = int(round(cfg.t_max / cfg.dt))
    for start in range(0, n, cfg.batch_size):
        m0 = min(cfg.batch_size, n - start)
        rng = _substream(cfg.seed, stream, start // cfg.batch_size)
        idx = np.arange(start, start + m0)
        v = np.zeros(m0)
        run_inf = np.zeros(m0)
        last_t = np.zeros(m0)
        for block in range(cfg.max_blocks):
            t0 = block * cfg.t_max
            for k in range(steps):
                m = v.size
                if m == 0:
                    break
                t_end = t0 + (k + 1) * cfg.dt
                c_end = v + model.mu * cfg.dt
                if model.sigma > 0:
                    c_end = c_end + rng.normal(0.0, math.sqrt(var_dt), m)
                if model.sigma > 0 and cfg.bridge_correction:
                    m_min = _bridge_min(rng, v, c_end, var_dt)
                else:
                    m_min = np.minimum(v, c_end)
                new_inf = np.minimum(run_inf, m_min)
                # reflected minimum over the step
                refl_min = m_min - np.minimum(new_inf, 0.0)
                contact = refl_min <= b
                last_t[contact] = t_end
                run_inf = new_inf
                v = c_end + _step_jumps(model, rng, m, cfg.dt)
            if v.size == 0:
                break
            d_star = v - np.minimum(run_inf, 0.0)
            above = d_star > b
            esc_p = np.zeros(v.size)
            esc_p[above] = escape_probability(d_star[above] - b, rho0)
            escaped = rng.random(v.size) < esc_p
            if escaped.any():
                l_last[idx[escaped]] = last_t[escaped]
                keep = ~escaped
                v, idx = v[keep], idx[keep]
                run_inf, last_t = run_inf[keep], last_t[keep]
        censored += idx.size
    return ReflectedLastPassageSample(b, l_last, censored)

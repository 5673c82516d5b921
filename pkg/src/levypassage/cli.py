"""Command-line front end.

Subcommands parse model/policy JSON files, dispatch to the library, and emit
CSV (one `#`-prefixed manifest header line, then %.17g numeric rows) or JSON.
`validate` runs the cross-validation suites and prints a PASS/FAIL table.

Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import NumericalError, UsageError
from .first_passage import (
    PenaltySpec,
    gamma_exact_cdf,
    inverse_gaussian_cdf,
    ph_transform,
    pk_series_transform,
    scale_formula_transform,
    transform_from_scales,
)
from .last_passage import (
    density_of_dt,
    last_passage_cdf,
    last_passage_joint_density,
    last_passage_overshoot_transform,
    reflected_last_passage_exp_joint,
    reflected_last_passage_transform,
)
from .lundberg import (
    build_scale_set,
    escape_rate,
    lundberg_truncated,
    scale_route_gap,
    scale_via_inversion,
    scale_via_ode_series,
    solve_lundberg,
)
from .maintenance import (
    PolicyKernels,
    expected_time_to_renewal,
    joint_law_idle,
    policy_from_json,
    simulate_policy,
)
from .mc import (
    SimConfig,
    estimate_first_passage,
    run_first_passage,
    run_last_passage,
    run_reflected_last_passage,
)
from .models import (
    KIND_BROWNIAN,
    KIND_PH,
    KIND_PURE_GAMMA,
    ModelSpec,
    model_from_json,
    model_to_dict,
)
from .reflected import ReflectedPassageKernel, duality_check, reflected_passage_density


@dataclass
class RunManifest:
    command: str
    model_digest: str
    parameters: dict
    version: str = __version__
    seed: int | None = None
    timestamp: float = field(default_factory=time.time)

    def header_line(self) -> str:
        doc = {
            "command": self.command,
            "model_digest": self.model_digest,
            "parameters": self.parameters,
            "version": self.version,
            "seed": self.seed,
            "timestamp": self.timestamp,
        }
        return "# " + json.dumps(doc, sort_keys=True)


def _digest(model: ModelSpec | None) -> str:
    if model is None:
        return "-"
    text = json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _write_rows(path: str | None, manifest: RunManifest, header: list[str], rows):
    """Atomically write a CSV with a manifest header; numeric cells as %.17g."""
    lines = [manifest.header_line(), ",".join(header)]
    for row in rows:
        lines.append(
            ",".join(
                f"{v:.17g}" if isinstance(v, (int, float, np.floating)) else str(v)
                for v in row
            )
        )
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-levy-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_model(path: str) -> ModelSpec:
    with open(path) as fh:
        return model_from_json(fh.read())


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------------------
# Subcommand handlers


def _cmd_model(args) -> int:
    model = _load_model(args.model)
    us = _float_list(args.u) if args.u else [0.0, 0.5, 1.0, 2.0]
    doc = {
        "model": model_to_dict(model),
        "digest": _digest(model),
        "mean_d1": model.mean_d1,
        "var_d1": model.var_d1,
        "phi_d": {f"{u:g}": float(model.phi_d(u)) for u in us},
    }
    if model.sigma > 0:
        doc["rho0"] = escape_rate(model)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def _cmd_scale(args) -> int:
    model = _load_model(args.model)
    scales = build_scale_set(model, args.delta, args.x_max, args.n, route=args.route)
    manifest = RunManifest(
        "scale",
        _digest(model),
        {"delta": args.delta, "x_max": args.x_max, "n": args.n, "route": scales.route},
    )
    xs = scales.w.grid()
    rows = zip(xs, scales.w.values, scales.w_prime.values, scales.z.values)
    _write_rows(args.out, manifest, ["x", "W", "Wp", "Z"], rows)
    return 0


def _parse_penalty(text: str) -> PenaltySpec:
    if text == "one":
        return PenaltySpec()
    if text.startswith("overshoot-indicator:"):
        return PenaltySpec(tag="overshoot_indicator", eps=float(text.split(":", 1)[1]))
    raise UsageError(f"unknown penalty {text!r}")


def _closed_transform(model: ModelSpec, delta: float, b: float) -> float | None:
    if model.kind == KIND_BROWNIAN:
        gam = math.sqrt(model.mu**2 + 2.0 * delta * model.sigma**2)
        return math.exp(-(gam - model.mu) * b / model.sigma**2)
    if model.kind == KIND_PH:
        return ph_transform(model, delta, b)
    return None


def _cmd_first_passage(args) -> int:
    model = _load_model(args.model)
    deltas = _float_list(args.delta)
    bs = _float_list(args.b)
    penalty = _parse_penalty(args.penalty)
    routes = ["pk", "scale", "closed"] if args.route == "all" else [args.route]
    b_max = max(bs) * 2.0 + 1.0
    rows = []
    for delta in deltas:
        for route in routes:
            if route == "pk":
                pk = pk_series_transform(model, delta, penalty, b_max=b_max)
                for b in bs:
                    rows.append((b, delta, float(pk(b)), "pk"))
            elif route == "scale":
                if penalty.tag != "one":
                    continue  # the scale identity covers w = 1 only
                scales = build_scale_set(model, delta, b_max)
                for b in bs:
                    rows.append((b, delta, scale_formula_transform(scales, b), "scale"))
            elif route == "closed":
                if penalty.tag != "one":
                    continue
                for b in bs:
                    val = _closed_transform(model, delta, b)
                    if val is not None:
                        rows.append((b, delta, val, "closed"))
            else:
                raise UsageError(f"unknown route {route!r}")
    manifest = RunManifest(
        "first-passage",
        _digest(model),
        {"delta": deltas, "b": bs, "route": args.route, "penalty": args.penalty},
    )
    _write_rows(args.out, manifest, ["b", "delta", "phi", "route"], rows)
    return 0


def _cmd_last_passage(args) -> int:
    model = _load_model(args.model)
    ts = _float_list(args.t) if args.t else [1.0]
    b = args.b
    rows: list[tuple] = []
    if args.what == "cdf":
        header = ["t", "cdf"]
        rho0 = escape_rate(model)
        for t in ts:
            rows.append((t, last_passage_cdf(model, b, t, rho0=rho0)))
    elif args.what == "joint":
        header = ["t", "a", "density"]
        rho0 = escape_rate(model)
        for t in ts:
            dens = density_of_dt(model, t)
            for a in np.linspace(max(dens.f.x0, b - 4), dens.f.x_max, args.grid_n):
                rows.append(
                    (t, a, float(last_passage_joint_density(model, b, t, a, rho0, dens)))
                )
    elif args.what == "overshoot":
        header = ["y", "w", "density"]
        scales = build_scale_set(model, args.delta, 2.0 * b)
        rho0 = escape_rate(model)
        for y in np.linspace(0.0, b, args.grid_n, endpoint=False):
            for w in np.linspace(0.05, 4.0, args.grid_n):
                rows.append(
                    (y, w, float(last_passage_overshoot_transform(model, scales, b, y, w, rho0)))
                )
    elif args.what == "reflected":
        header = ["delta", "laplace"]
        rho0 = escape_rate(model)
        a_max = b + 24.0 / rho0
        for delta in _float_list(args.delta_list or str(args.delta)):
            scales = build_scale_set(model, delta, a_max, n=4097)
            phi = transform_from_scales(scales)
            rows.append((delta, reflected_last_passage_transform(model, phi, b, rho0)))
    else:
        raise UsageError(f"unknown --what {args.what!r}")
    manifest = RunManifest(
        "last-passage", _digest(model), {"b": b, "t": ts, "what": args.what}
    )
    _write_rows(args.out, manifest, header, rows)
    return 0


def _cmd_reflected(args) -> int:
    model = _load_model(args.model)
    b = args.b
    scales = build_scale_set(model, args.delta, max(2.0 * b, b + 1.0))
    ys = np.linspace(0.0, b, args.grid_y)
    zs = np.linspace(b * (1.0 + 1e-9) + 1e-9, args.z_max, args.grid_z)
    rows = []
    for y in ys:
        dens = reflected_passage_density(model, scales, b, np.full_like(zs, y), zs)
        for z, val in zip(zs, dens):
            rows.append((y, z, float(val)))
    manifest = RunManifest(
        "reflected", _digest(model), {"delta": args.delta, "b": b, "z_max": args.z_max}
    )
    _write_rows(args.out, manifest, ["y", "z", "density"], rows)
    return 0


def _cmd_duality(args) -> int:
    model = _load_model(args.model)
    cfg = SimConfig(
        dt=args.dt,
        t_max=max(args.t, args.dt),
        n_paths=args.paths,
        seed=args.seed,
        bridge_correction=args.bridge == "on",
        max_blocks=1,
    )
    refl, fp = duality_check(model, args.b, args.t, cfg)
    doc = {
        "p_reflected_exceeds": {"estimate": refl.estimate, "se": refl.std_error, "n": refl.n},
        "p_passage_by_t": {"estimate": fp.estimate, "se": fp.std_error, "n": fp.n},
        "gap_in_se": abs(refl.estimate - fp.estimate)
        / max(math.hypot(refl.std_error, fp.std_error), 1e-300),
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def _cmd_maintenance(args) -> int:
    model = _load_model(args.model)
    with open(args.policy) as fh:
        policy = policy_from_json(fh.read())
    kernels = PolicyKernels(model, policy)
    manifest = RunManifest(
        "maintenance",
        _digest(model),
        {"what": args.what, "i": args.i, "z": args.z, "paths": args.paths},
        seed=args.seed,
    )
    if args.what == "kernels":
        ys = kernels.default_state_grid(args.i)
        a0 = kernels.kernel_a(0.0, ys)
        rows = [(float(y), float(a), kernels.kernel_c(float(y))) for y, a in zip(ys[:: max(1, ys.size // 64)], a0[:: max(1, ys.size // 64)])]
        _write_rows(args.out, manifest, ["y", "A0_density", "C"], rows)
    elif args.what == "joint":
        p_fail, _, _, _ = kernels.chain(args.i)
        rows = [(i + 1, float(p)) for i, p in enumerate(p_fail)]
        _write_rows(args.out, manifest, ["i", "P_I"], rows)
    elif args.what == "idle":
        rows = [(args.i, args.z, joint_law_idle(kernels, args.i, args.z))]
        _write_rows(args.out, manifest, ["i", "z", "P_idle_gt_z_and_I"], rows)
    elif args.what == "expected":
        rows = [(i, expected_time_to_renewal(kernels, i)) for i in range(1, args.i + 1)]
        _write_rows(args.out, manifest, ["i", "E_Tstar_on_I"], rows)
    elif args.what == "simulate":
        sim = simulate_policy(model, policy, args.paths, seed=args.seed, idle_mode=args.idle)
        doc = {"n": sim.n, "p_i": {}, "mean_t_star": None}
        for i in range(1, args.i + 1):
            r = sim.p_i(i)
            doc["p_i"][str(i)] = {"estimate": r.estimate, "se": r.std_error}
        m = sim.mean_t_star()
        doc["mean_t_star"] = {"estimate": m.estimate, "se": m.std_error}
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        raise UsageError(f"unknown --what {args.what!r}")
    return 0


def _cmd_simulate(args) -> int:
    model = _load_model(args.model)
    cfg = SimConfig(
        dt=args.dt,
        t_max=args.t_max,
        n_paths=args.paths,
        seed=args.seed,
        bridge_correction=args.bridge == "on",
        max_blocks=args.max_blocks,
    )
    if args.target == "first":
        sample = run_first_passage(model, cfg, args.b)
        res = sample.cdf_at(args.t) if args.delta is None else sample.laplace_at(args.delta)
    elif args.target == "last":
        sample = run_last_passage(model, cfg, args.b)
        res = sample.cdf_at(args.t) if args.delta is None else sample.laplace_at(args.delta)
    elif args.target == "reflected-first":
        from .mc import run_reflected_first_passage

        res = run_reflected_first_passage(model, cfg, args.b).laplace_at(args.delta or 0.5)
    elif args.target == "reflected-last":
        res = run_reflected_last_passage(model, cfg, args.b).laplace_at(args.delta or 0.5)
    else:
        raise UsageError(f"unknown target {args.target!r}")
    doc = {
        "estimate": res.estimate,
        "se": res.std_error,
        "n": res.n,
        "meta": res.meta,
        "censored": res.extra.get("censored", 0),
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Validation suite


def _example_models() -> dict[str, ModelSpec]:
    from .models import PhaseType

    return {
        "bm": ModelSpec(kind=KIND_BROWNIAN, mu=1.0, sigma=1.0),
        "pgamma": ModelSpec(kind="perturbed_gamma", mu=0.0, sigma=1.0, alpha=1.0, xi=1.0),
        "ph": ModelSpec(
            kind=KIND_PH, mu=0.0, sigma=1.0, lam=1.0, ph=PhaseType([1.0], [[-1.0]])
        ),
        "gamma": ModelSpec(kind=KIND_PURE_GAMMA, mu=0.0, sigma=0.0, alpha=1.0, xi=1.0),
    }


def run_validation(quick: bool = True, seed: int = 20260810) -> list[tuple[str, float, float, bool]]:
    """Cross-validation rows: (name, value, tolerance, passed)."""
    from .last_passage import last_passage_joint_mass

    models = _example_models()
    rows: list[tuple[str, float, float, bool]] = []

    def add(name: str, value: float, tol: float):
        rows.append((name, value, tol, bool(value <= tol)))

    # route triangle for the Brownian model
    bm = models["bm"]
    delta, b = 0.5, 1.0
    exact = math.exp(-(math.sqrt(2.0) - 1.0))
    pk = float(pk_series_transform(bm, delta, b_max=2.5)(b))
    sc = scale_formula_transform(build_scale_set(bm, delta, 2.5), b)
    add("bm_first_passage_pk_vs_exact", abs(pk - exact), 1e-3)
    add("bm_first_passage_scale_vs_exact", abs(sc - exact), 1e-3)

    # scale Laplace identity per perturbed kind
    for name in ("bm", "pgamma", "ph"):
        model = models[name]
        scales = build_scale_set(model, delta, x_max=24.0 / solve_lundberg(model, delta).rho, n=4097)
        beta = 2.0 * scales.rho.rho
        num = scales.laplace_numeric(beta)
        ex = scales.laplace_exact(model, beta)
        add(f"scale_laplace_{name}", abs(num / ex - 1.0), 1e-4)

    # truncated Lundberg roots increase
    pg = models["pgamma"]
    rho_seq = [lundberg_truncated(pg, 1.0, n) for n in (4, 64, 1024)]
    mono = 0.0 if rho_seq[0] <= rho_seq[1] <= rho_seq[2] else 1.0
    add("lundberg_truncated_monotone", mono, 0.5)

    # Park-Padgett value
    add(
        "gamma_exact_cdf_value",
        abs(gamma_exact_cdf(models["gamma"], 1.0, 1.0) - math.exp(-1.0)),
        1e-10,
    )

    # mass split per kind
    for name, model in models.items():
        split = last_passage_cdf(model, 1.0, 1.0) + last_passage_joint_mass(model, 1.0, 1.0)
        add(f"last_passage_mass_split_{name}", abs(split - 1.0), 1e-5)

    # duality (Monte Carlo)
    n_paths = 20_000 if quick else 100_000
    cfg = SimConfig(dt=2e-3, t_max=1.0, n_paths=n_paths, seed=seed, max_blocks=1)
    refl, fp = duality_check(models["bm"], 1.0, 1.0, cfg)
    gap = abs(refl.estimate - fp.estimate)
    add("duality_bm_gap_in_3se", gap / (3.0 * math.hypot(refl.std_error, fp.std_error)), 1.0)

    # MC vs analytic first passage (Brownian)
    cfg2 = SimConfig(dt=2e-3, t_max=8.0, n_paths=n_paths, seed=seed + 1, max_blocks=4)
    mc = estimate_first_passage(models["bm"], cfg2, 1.0, "laplace", delta=0.5)
    add("bm_laplace_mc_gap_in_3se", abs(mc.estimate - exact) / (3.0 * mc.std_error), 1.0)

    # maintenance mass conservation
    from .maintenance import InspectionSchedule, MaintenanceAction, PolicySpec

    pol = PolicySpec(
        b=2.0, m=InspectionSchedule("constant", value=1.0), d=MaintenanceAction("affine", theta=0.5)
    )
    ker = PolicyKernels(models["bm"], pol)
    ys = ker.default_state_grid(4)
    worst = 0.0
    for x in (0.0, 0.5, 1.0):
        mass = float(np.trapezoid(ker.kernel_a(x, ys), ys)) + ker.kernel_c(x)
        worst = max(worst, abs(mass - 1.0))
    add("maintenance_cycle_mass", worst, 1e-4)

    return rows


def _cmd_validate(args) -> int:
    rows = run_validation(quick=args.quick, seed=args.seed)
    manifest = RunManifest("validate", "-", {"quick": args.quick}, seed=args.seed)
    out_rows = []
    n_fail = 0
    for name, value, tol, ok in rows:
        status = "PASS" if ok else "FAIL"
        n_fail += not ok
        print(f"{status}  {name:42s} value={value:.3e}  tol={tol:.1e}")
        out_rows.append((name, value, tol, status))
    if args.out:
        _write_rows(args.out, manifest, ["check", "value", "tol", "status"], out_rows)
    print(f"{len(rows) - n_fail}/{len(rows)} checks passed")
    return 1 if n_fail else 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="levy-passage",
        description="Failure-time laws for Brownian-perturbed subordinator degradation models",
    )
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("model", help="validate a model file and print its characteristics")
    q.add_argument("--model", required=True)
    q.add_argument("--u", help="comma-separated exponent arguments")
    q.set_defaults(func=_cmd_model)

    q = sub.add_parser("scale", help="tabulate W, W', Z")
    q.add_argument("--model", required=True)
    q.add_argument("--delta", type=float, required=True)
    q.add_argument("--x-max", type=float, default=4.0)
    q.add_argument("--n", type=int, default=2049)
    q.add_argument("--route", default="auto")
    q.add_argument("--out")
    q.set_defaults(func=_cmd_scale)

    q = sub.add_parser("first-passage", help="penalty transform of T_b")
    q.add_argument("--model", required=True)
    q.add_argument("--delta", required=True, help="comma-separated discount rates")
    q.add_argument("--b", required=True, help="comma-separated thresholds")
    q.add_argument("--route", default="all", choices=["pk", "scale", "closed", "all"])
    q.add_argument("--penalty", default="one", help="one | overshoot-indicator:<eps>")
    q.add_argument("--out")
    q.set_defaults(func=_cmd_first_passage)

    q = sub.add_parser("last-passage", help="laws of L_b and L*_b")
    q.add_argument("--model", required=True)
    q.add_argument("--b", type=float, required=True)
    q.add_argument("--t", help="comma-separated times")
    q.add_argument("--delta", type=float, default=0.5)
    q.add_argument("--delta-list")
    q.add_argument("--what", default="cdf", choices=["cdf", "joint", "overshoot", "reflected"])
    q.add_argument("--grid-n", type=int, default=64)
    q.add_argument("--out")
    q.set_defaults(func=_cmd_last_passage)

    q = sub.add_parser("reflected", help="reflected first-passage jump density")
    q.add_argument("--model", required=True)
    q.add_argument("--delta", type=float, default=0.5)
    q.add_argument("--b", type=float, required=True)
    q.add_argument("--grid-y", type=int, default=33)
    q.add_argument("--grid-z", type=int, default=33)
    q.add_argument("--z-max", type=float, default=5.0)
    q.add_argument("--out")
    q.set_defaults(func=_cmd_reflected)

    q = sub.add_parser("duality", help="MC check P(D*_t > b) = P(T_b <= t)")
    q.add_argument("--model", required=True)
    q.add_argument("--b", type=float, required=True)
    q.add_argument("--t", type=float, required=True)
    q.add_argument("--paths", type=int, default=20000)
    q.add_argument("--dt", type=float, default=2e-3)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--bridge", default="on", choices=["on", "off"])
    q.set_defaults(func=_cmd_duality)

    q = sub.add_parser("maintenance", help="inspection-policy kernels and laws")
    q.add_argument("--model", required=True)
    q.add_argument("--policy", required=True)
    q.add_argument("--what", default="joint", choices=["kernels", "joint", "idle", "expected", "simulate"])
    q.add_argument("--i", type=int, default=3)
    q.add_argument("--z", type=float, default=0.5)
    q.add_argument("--paths", type=int, default=20000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--idle", action="store_true")
    q.add_argument("--out")
    q.set_defaults(func=_cmd_maintenance)

    q = sub.add_parser("simulate", help="Monte Carlo estimators")
    q.add_argument("--model", required=True)
    q.add_argument("--target", required=True, choices=["first", "last", "reflected-first", "reflected-last"])
    q.add_argument("--b", type=float, required=True)
    q.add_argument("--t", type=float)
    q.add_argument("--delta", type=float)
    q.add_argument("--paths", type=int, default=20000)
    q.add_argument("--dt", type=float, default=1e-3)
    q.add_argument("--t-max", type=float, default=8.0)
    q.add_argument("--max-blocks", type=int, default=16)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--bridge", default="on", choices=["on", "off"])
    q.set_defaults(func=_cmd_simulate)

    q = sub.add_parser("validate", help="run the cross-validation suite")
    q.add_argument("--quick", action="store_true")
    q.add_argument("--seed", type=int, default=20260810)
    q.add_argument("--out")
    q.set_defaults(func=_cmd_validate)

    return p


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())

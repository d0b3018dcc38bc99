"""Configuration-driven experiment harness.

A JSON config describes one experiment family: the problem (spectral test
problem or a disk inverse-source example), the methods, scheme parameters,
noise levels, the stopping rule, and an optional one-parameter sweep.  Each
(method, noise level, sweep value) triple yields exactly one result row, in
declaration order, and identical config + seed reproduces identical CSV
bytes.
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng
from .blt import blt_operator, simulate_measurements
from .fem import Coefficients, assemble
from .flow import SourceConditionFixture, rate_experiment
from .mesh import disk_mesh_rings, mark_omega0, region_from_config
from .operators import DiagonalOperator, NoiseSpec, estimate_norm
from .solvers import METHODS, SchemeParams, StoppingRule, run

N_MAX_DEFAULT = 5000


class ConfigError(ValueError):
    """Invalid experiment configuration (maps to CLI exit code 2)."""


@dataclass
class ResultRow:
    method: str
    delta_prime: float
    tau: float
    dt: float
    s: float
    k_star: int
    error: float
    stopped_by: str
    sweep_name: str = ""
    sweep_value: float = float("nan")
    record: object = None


def _require(cfg, key, kind, where):
    if key not in cfg:
        raise ConfigError(f"{where}: missing required field {key!r}")
    val = cfg[key]
    if kind is float and isinstance(val, (int, float)) and not isinstance(val, bool):
        return float(val)
    if not isinstance(val, kind):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, got {type(val).__name__}")
    return val


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    problem = _require(cfg, "problem", dict, "config")
    kind = problem.get("kind")
    if kind not in ("spectral", "blt"):
        raise ConfigError("problem.kind: expected 'spectral' or 'blt'")
    methods = _require(cfg, "methods", list, "config")
    if not methods:
        raise ConfigError("methods: list must be nonempty")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"methods: unknown method {m!r}; expected one of {METHODS}")
    for m in cfg.get("method_params", {}):
        if m not in METHODS:
            raise ConfigError(f"method_params: unknown method {m!r}; expected one of {METHODS}")
    noise = _require(cfg, "noise", dict, "config")
    levels = _require(noise, "levels", list, "noise")
    if not levels:
        raise ConfigError("noise.levels: list must be nonempty")
    sweep = cfg.get("sweep")
    if sweep is not None:
        name = _require(sweep, "name", str, "sweep")
        if name not in ("tau", "dt", "s", "nu", "alpha", "omega", "n_max"):
            raise ConfigError(f"sweep.name: unknown parameter {name!r}")
        values = _require(sweep, "values", list, "sweep")
        if not values:
            raise ConfigError("sweep.values: list must be nonempty")
    return cfg


def scheme_params(cfg, overrides=None):
    p = dict(cfg.get("params", {}))
    if overrides:
        p.update(overrides)
    try:
        return SchemeParams(
            s=float(p.get("s", 1.0)),
            dt=float(p.get("dt", 0.125)),
            nu=float(p.get("nu", 0.5)),
            alpha=float(p.get("alpha", 3.0)),
            omega=None if p.get("omega") is None else float(p["omega"]),
        )
    except ValueError as exc:
        raise ConfigError(f"params: {exc}")


# ---------------------------------------------------------------------------
# problem construction (cached per process; sweeps reuse the expensive parts)

_context_cache = {}


def _blt_context(problem, level, seed):
    key = json.dumps([problem, level, seed], sort_keys=True)
    if key in _context_cache:
        return _context_cache[key]

    example = problem.get("example", 1)
    rings = int(problem.get("rings", 27))
    data_rings = int(problem.get("data_rings", 2 * rings))
    c = problem.get("coefficients", {})
    mu_a = float(c.get("mu_a", 0.04))
    mu_s = float(c.get("mu_s_prime", 1.5))
    coeff = Coefficients(
        D=float(c.get("D", 1.0 / (3.0 * (mu_a + mu_s)))),
        mu_a=mu_a,
        A_robin=float(c.get("A", 3.2)),
        g_minus=float(c.get("g_minus", 0.0)),
    )
    if "omega0" in problem:
        region = region_from_config(problem["omega0"])
    elif example == 2:
        region = region_from_config(
            {
                "kind": "union",
                "regions": [
                    {"kind": "disk", "center": [-0.5, 0.0], "radius": 0.1},
                    {"kind": "disk", "center": [0.5, 0.0], "radius": 0.1},
                ],
            }
        )
    else:
        region = region_from_config({"kind": "square", "center": [0.0, 0.0], "half_width": 0.5})

    if example == 2:
        def f_true(x, y):
            left = (x + 0.5) ** 2 + y**2 < 0.01
            right = (x - 0.5) ** 2 + y**2 < 0.01
            return (1.0 + x + y) * left + math.exp(1.0 + x + y) * right
    else:
        def f_true(x, y):
            return 1.0 + x + y

    recon = mark_omega0(disk_mesh_rings(rings), region)
    fine = mark_omega0(disk_mesh_rings(data_rings), region)
    rs, fs = assemble(recon, coeff), assemble(fine, coeff)
    data = simulate_measurements(fs, rs, f_true, NoiseSpec(level, seed=seed))
    op, y_delta = blt_operator(rs, data.g1, data.g2)
    op_norm = estimate_norm(op, iters=int(problem.get("norm_iters", 30)), seed=0)
    op._warm.clear()
    truth = np.asarray([f_true(x, y) for x, y in recon.nodes[recon.omega0_nodes]])
    ctx = {
        "sys": rs,
        "data": data,
        "delta": data.delta,
        "op_norm": op_norm,
        "truth": truth,
        "f0": problem.get("f0", 1.0),
    }
    _context_cache[key] = ctx
    return ctx


def _spectral_context(problem, level, seed):
    key = json.dumps([problem, level, seed], sort_keys=True)
    if key in _context_cache:
        return _context_cache[key]
    n = int(problem.get("n_modes", 2000))
    p = float(problem.get("sigma_decay", 1.0))
    mu = float(problem.get("mu", 0.5))
    sigma = np.arange(1.0, n + 1.0) ** -p
    fixture = SourceConditionFixture.power_law(
        n, mu=mu, exponent=float(problem.get("v0_exponent", 0.51))
    )
    truth = np.zeros(n)
    f0 = truth + sigma ** (2.0 * mu) * fixture.v0_coeff
    y = sigma * truth
    direction = rng.unit_vector(seed, n)
    y_norm = float(np.linalg.norm(y)) or 1.0
    delta = level * y_norm if level > 0 else level
    ctx = {
        "op": DiagonalOperator(sigma),
        "y_delta": y + delta * direction,
        "delta": delta,
        "f0_vec": f0,
        "truth": truth,
        "op_norm": float(sigma[0]),
        "fixture": fixture,
        "sigma": sigma,
    }
    _context_cache[key] = ctx
    return ctx


def _run_point(cfg, method, level, sweep_name, sweep_value):
    seed = int(cfg.get("noise", {}).get("seed", 0))
    stopping = cfg.get("stopping", {})
    tau = float(stopping.get("tau", 1.0))
    n_max = int(stopping.get("n_max", N_MAX_DEFAULT))
    overrides = dict(cfg.get("method_params", {}).get(method, {}))
    if sweep_name in ("dt", "s", "nu", "alpha", "omega"):
        overrides[sweep_name] = sweep_value
    elif sweep_name == "tau":
        tau = float(sweep_value)
    elif sweep_name == "n_max":
        n_max = int(sweep_value)
    params = scheme_params(cfg, overrides)

    problem = cfg["problem"]
    if problem["kind"] == "blt":
        ctx = _blt_context(problem, level, seed)
        op, y_delta = blt_operator(ctx["sys"], ctx["data"].g1, ctx["data"].g2)
        f0 = ctx["f0"]
        n0 = ctx["sys"].omega0_nodes.size
        f0_vec = np.full(n0, float(f0)) if np.isscalar(f0) else np.asarray(f0)
    else:
        ctx = _spectral_context(problem, level, seed)
        op, y_delta, f0_vec = ctx["op"], ctx["y_delta"], ctx["f0_vec"]

    stop = StoppingRule.discrepancy(tau, ctx["delta"], n_max=n_max)
    rec = run(
        method,
        op,
        y_delta,
        f0_vec,
        params,
        stop,
        truth=ctx["truth"],
        op_norm=ctx["op_norm"],
        enforce_step_bound=False,
    )
    return ResultRow(
        method=method,
        delta_prime=level,
        tau=tau,
        dt=params.dt,
        s=params.s,
        k_star=rec.k_star,
        error=rec.final_error if rec.final_error is not None else float("nan"),
        stopped_by=rec.stopped_by,
        sweep_name=sweep_name or "",
        sweep_value=float(sweep_value) if sweep_value is not None else float("nan"),
        record=rec,
    )


def _point_worker(args):
    cfg, method, level, sweep_name, sweep_value = args
    row = _run_point(cfg, method, level, sweep_name, sweep_value)
    row.record = None  # histories stay in the worker
    return row


def run_config(cfg, workers=1):
    """All (method, noise level, sweep value) points, in declaration order."""
    validate_config(cfg)
    sweep = cfg.get("sweep")
    sweep_name = sweep["name"] if sweep else None
    sweep_values = sweep["values"] if sweep else [None]
    points = [
        (cfg, method, float(level), sweep_name, value)
        for method in cfg["methods"]
        for level in cfg["noise"]["levels"]
        for value in sweep_values
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_point_worker, points))
    return [_run_point(*p) for p in points]


def compare_methods(cfg, workers=1):
    """One row per (method, noise level); ignores any sweep section."""
    cfg = dict(cfg)
    cfg.pop("sweep", None)
    return run_config(cfg, workers=workers)


# ---------------------------------------------------------------------------
# output


CSV_HEADER = "method,delta_prime,tau,dt,s,k_star,E_kstar,stopped_by"


def emit_csv(rows, path):
    """Write result rows with fixed 6-significant-digit formatting."""
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r.method},{r.delta_prime:.5e},{r.tau:.5e},{r.dt:.5e},{r.s:.5e},"
            f"{r.k_star},{r.error:.5e},{r.stopped_by}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def emit_history_csv(record, path):
    """Per-iteration series (k vs residual and relative error)."""
    lines = ["k,residual,error"]
    for k, res in enumerate(record.residual_history):
        err = record.error_history[k] if record.error_history is not None else float("nan")
        lines.append(f"{k},{res:.5e},{err:.5e}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# trend checks (Table 1 / Table 2 style, opt-in via --check)


def check_trends(rows, slack=0.10):
    """Qualitative sweep assertions; returns a list of failure messages.

    tau sweeps: k* nonincreasing as tau grows (within slack).
    dt sweeps: k* * dt constant (within slack) over converged, uncapped
    points with k* large enough to ignore integer effects.
    """
    failures = []
    by_group = {}
    for r in rows:
        by_group.setdefault((r.method, r.delta_prime, r.sweep_name), []).append(r)
    for (method, level, name), group in by_group.items():
        if name == "tau":
            ordered = sorted(group, key=lambda r: r.sweep_value)
            ks = [r.k_star for r in ordered if r.stopped_by in ("discrepancy", "max_iter")]
            for a, b in zip(ks, ks[1:]):
                if b > a * (1.0 + slack):
                    failures.append(
                        f"{method} delta'={level}: k* not nonincreasing in tau ({a} -> {b})"
                    )
                    break
        elif name == "dt":
            good = [
                r
                for r in group
                if r.stopped_by == "discrepancy" and r.k_star >= 10
            ]
            prods = [r.k_star * r.sweep_value for r in good]
            if len(prods) >= 2 and max(prods) > min(prods) * (1.0 + slack):
                failures.append(
                    f"{method} delta'={level}: k* * dt varies beyond {slack:.0%} "
                    f"({min(prods):.3g} .. {max(prods):.3g})"
                )
            if not any(r.stopped_by == "divergence" for r in group):
                failures.append(
                    f"{method} delta'={level}: dt sweep never reached the divergence guard"
                )
    return failures


# ---------------------------------------------------------------------------
# convergence-rate report


def rate_report(cfg):
    """Slope table for the continuous flow and the discrete scheme.

    Columns per mu: the fitted error and T*/k* slopes of both realizations
    next to the theory values 2mu/(2mu+1) and -1/(2mu+1).
    """
    problem = cfg.get("problem", {})
    mus = cfg.get("mus", [0.25, 0.5])
    if not mus:
        raise ConfigError("mus: list must be nonempty")
    n = int(problem.get("n_modes", 2000))
    p = float(problem.get("sigma_decay", 1.0))
    s = float(cfg.get("params", {}).get("s", 1.0))
    dt = float(cfg.get("params", {}).get("dt", 1.0))
    tau = float(cfg.get("stopping", {}).get("tau", 1.5))
    seed = int(cfg.get("noise", {}).get("seed", 1))
    deltas = cfg.get("noise", {}).get("levels") or list(np.logspace(-2, -5, 7))
    sigma = np.arange(1.0, n + 1.0) ** -p
    op = DiagonalOperator(sigma)

    rows = []
    for mu in mus:
        fixture = SourceConditionFixture.power_law(
            n, mu=float(mu), exponent=float(problem.get("v0_exponent", 0.51))
        )
        err_c, t_c = rate_experiment(
            fixture, sigma, s, deltas, rule="discrepancy", tau=tau, noise_seed=seed
        )
        truth = np.zeros(n)
        f0 = sigma ** (2.0 * float(mu)) * fixture.v0_coeff
        direction = rng.unit_vector(seed, n)
        ks, errs = [], []
        for delta in deltas:
            rec = run(
                "arm",
                op,
                sigma * truth + float(delta) * direction,
                f0,
                SchemeParams(s=s, dt=dt),
                StoppingRule.discrepancy(tau, float(delta), n_max=100000),
                truth=truth,
                op_norm=float(sigma[0]),
            )
            ks.append(rec.k_star)
            errs.append(rec.final_error)
        logd = np.log(np.asarray(deltas, dtype=float))
        err_d = float(np.polyfit(logd, np.log(errs), 1)[0])
        k_d = float(np.polyfit(logd, np.log(ks), 1)[0])
        rows.append(
            {
                "mu": float(mu),
                "theory_error_slope": 2.0 * mu / (2.0 * mu + 1.0),
                "theory_time_slope": -1.0 / (2.0 * mu + 1.0),
                "flow_error_slope": err_c,
                "flow_time_slope": t_c,
                "scheme_error_slope": err_d,
                "scheme_k_slope": k_d,
            }
        )
    return rows


def format_rate_table(rows):
    header = (
        "mu     err(theory)  err(flow)  err(scheme)  T/k(theory)  T(flow)   k(scheme)"
    )
    lines = [header]
    for r in rows:
        lines.append(
            f"{r['mu']:<6.3g} {r['theory_error_slope']:^12.4f} {r['flow_error_slope']:^10.4f} "
            f"{r['scheme_error_slope']:^12.4f} {r['theory_time_slope']:^12.4f} "
            f"{r['flow_time_slope']:^9.4f} {r['scheme_k_slope']:^9.4f}"
        )
    return "\n".join(lines)

"""Command-line entry point: ``hessbound {symcheck,solve,estimate,audit}``.

Configuration comes from built-in defaults, then an optional YAML file of
flat dotted keys (``--config``), then command-line flags. ``--dump-defaults``
prints the defaults in the same format. Exit status is 0 when every check
of the requested battery passes, 1 when one fails and 2 for configuration
errors.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from . import equations as eq
from . import estimates as es
from . import symfunc
from .conditions import ConditionReport
from .errors import DomainError, HessboundError
from .exprs import FieldExpr
from .geometry import DiscreteManifold, ScalarField, save_field
from .solver import SolveConfig, continuation_solve, newton_solve, perturbed_guess

COMMANDS = ("symcheck", "solve", "estimate", "audit")

DEFAULTS = {
    "seed": 0,
    "preset": "schouten",
    "operator.kind": "sigma_root",
    "operator.n": None,
    "operator.k": 2,
    "operator.l": 0,
    "operator.t": 1.0,
    "operator.s": 0.0,
    "chart.kind": None,
    "chart.N": 32,
    "chart.L": None,
    "chart.dims": None,
    "manufactured": "bump",
    "mode": "analytic",
    "noise": 0.1,
    "solver.max_iters": 25,
    "solver.residual_tol": 1e-10,
    "solver.cone_margin": 1e-6,
    "solver.linear_solver": "direct",
    "solver.continuation_steps": 1,
    "symcheck.samples": 1000,
    "estimate.family": "radius",
    "estimate.radii": "1,0.5,0.25",
    "estimate.r": 1.0,
    "estimate.ts": "1,100,10",
    "estimate.case": "C31",
    "estimate.f": None,
    "audit.case": None,
    "output.dir": None,
}

# types of keys whose default is None
NULLABLE = {"operator.n": int, "chart.kind": str, "chart.L": float, "chart.dims": int, "audit.case": str, "output.dir": str,
            "estimate.f": float}

# constant f of the bubble state per estimate family
FAMILY_F = {"radius": 0.5, "cinf": 500.0}

# chart defaults per preset; used where the configuration leaves a key unset
PRESET_CHARTS = {
    "schouten": {"n": 4, "kind": "euclidean", "L": 1.0, "dims": 2},
    "lc_schouten": {"n": 4, "kind": "euclidean", "L": 1.0, "dims": 2},
    "optics": {"n": 2, "kind": "sphere", "L": 0.9, "dims": None},
    "gauss_flat": {"n": 2, "kind": "euclidean", "L": 2.0, "dims": None},
    "gauss_sphere": {"n": 2, "kind": "sphere", "L": 0.9, "dims": None},
    "laplace": {"n": 2, "kind": "euclidean", "L": 2.0, "dims": None},
}

# the estimate families default to the three-dimensional bubble
COMMAND_DEFAULTS = {
    "estimate": {"operator.n": 3, "chart.N": 24, "chart.L": 2.4, "chart.dims": 3, "manufactured": "bubble"},
}

FIELDS = {
    "schouten": {"bump": "0.25*(x1**2+x2**2)+0.03*cos(3*x1+1)*sin(2*x2+0.5)"},
    "lc_schouten": {"bump": "0.25*(x1**2+x2**2)+0.03*cos(3*x1+1)*sin(2*x2+0.5)"},
    "optics": {"bump": "0.2*sin(2*x1+0.3)*cos(x2)+0.1*x1*x2"},
    "gauss_flat": {"bump": "(x1**2+x2**2)/2+0.1*sin(2*x1)*cos(x2+0.4)", "quadratic": "(x1**2+x2**2)/2"},
    "gauss_sphere": {"bump": "0.2*sin(2*x1+0.3)*cos(x2)+0.1*x1*x2"},
    "laplace": {"bump": "0.5*sin(x1)*cos(x2)"},
}


# keys restricted to a fixed set of values
CHOICES = {
    "preset": tuple(sorted(eq.PRESETS)),
    "operator.kind": ("sigma_root", "quotient", "lincomb"),
    "chart.kind": ("torus", "euclidean", "sphere"),
    "mode": ("analytic", "discrete"),
    "solver.linear_solver": ("direct", "bicgstab"),
    "estimate.family": ("radius", "cinf", "maxprinciple"),
    "estimate.case": es.TAGS,
    "audit.case": es.TAGS,
}


class ConfigError(Exception):
    """Invalid configuration; carries the offending key or location."""


# --------------------------------------------------------------- config
def _coerce(key, value):
    default = DEFAULTS[key]
    if value is None:
        return value
    kind = NULLABLE[key] if default is None else type(default)
    if kind is int and isinstance(value, float) and not value.is_integer():
        raise ConfigError(f"key '{key}': expected an integer, got {value!r}")
    try:
        value = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"key '{key}': cannot interpret {value!r} as {kind.__name__}") from None
    if key in CHOICES and value not in CHOICES[key]:
        raise ConfigError(f"key '{key}': {value!r} is not one of {', '.join(CHOICES[key])}")
    return value


def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}:{where} YAML parse error") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping of dotted keys")
    lines = text.splitlines()
    out = {}
    for key, value in data.items():
        lineno = next((i + 1 for i, ln in enumerate(lines) if ln.lstrip().startswith(f"{key}:")), "?")
        if key not in DEFAULTS:
            raise ConfigError(f"{path}: line {lineno}: unknown key '{key}'")
        try:
            out[key] = _coerce(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{path}: line {lineno}: {exc}") from None
    return out


def defaults_for(command=None) -> dict:
    cfg = dict(DEFAULTS)
    cfg.update(COMMAND_DEFAULTS.get(command, {}))
    return cfg


def dump_defaults(command=None) -> str:
    return yaml.safe_dump(defaults_for(command), sort_keys=True, default_flow_style=False)


FLAG_KEYS = {
    "seed": "seed",
    "preset": "preset",
    "kind": "operator.kind",
    "n": "operator.n",
    "k": "operator.k",
    "l": "operator.l",
    "t": "operator.t",
    "s": "operator.s",
    "chart": "chart.kind",
    "N": "chart.N",
    "L": "chart.L",
    "dims": "chart.dims",
    "manufactured": "manufactured",
    "mode": "mode",
    "noise": "noise",
    "max_iters": "solver.max_iters",
    "tol": "solver.residual_tol",
    "linear_solver": "solver.linear_solver",
    "steps": "solver.continuation_steps",
    "samples": "symcheck.samples",
    "family": "estimate.family",
    "radii": "estimate.radii",
    "r": "estimate.r",
    "ts": "estimate.ts",
    "case": "estimate.case",
    "audit_case": "audit.case",
    "out": "output.dir",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hessbound", description=__doc__.splitlines()[0])
    parser.add_argument("--dump-defaults", action="store_true", help="print default configuration and exit")
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--dump-defaults", action="store_true", help="print this command's defaults and exit")
        p.add_argument("--config", help="YAML file of dotted keys")
        p.add_argument("--seed", type=int)
        p.add_argument("--preset", choices=sorted(eq.PRESETS))
        p.add_argument("--kind", choices=("sigma_root", "quotient", "lincomb"))
        p.add_argument("--n", type=int)
        p.add_argument("--k", type=int)
        p.add_argument("--l", type=int)
        p.add_argument("--t", type=float)
        p.add_argument("--s", type=float)
        p.add_argument("--chart", choices=("torus", "euclidean", "sphere"))
        p.add_argument("--N", type=int)
        p.add_argument("--L", type=float)
        p.add_argument("--dims", type=int)
        p.add_argument("--manufactured", help="field name (bump, quadratic, bubble) or expression in x1..xn")
        p.add_argument("--mode", choices=("analytic", "discrete"))
        p.add_argument("--noise", type=float)
        p.add_argument("--max-iters", dest="max_iters", type=int)
        p.add_argument("--tol", type=float)
        p.add_argument("--linear-solver", dest="linear_solver", choices=("direct", "bicgstab"))
        p.add_argument("--steps", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--family", choices=("radius", "cinf", "maxprinciple"))
        p.add_argument("--radii")
        p.add_argument("--r", type=float)
        p.add_argument("--ts", help="start,stop,count of the geometric t grid")
        p.add_argument("--case", choices=es.TAGS)
        p.add_argument("--audit-case", dest="audit_case", choices=es.TAGS)
        p.add_argument("--out", help="directory for fields, reports and tables")
    return parser


def resolve_config(args) -> dict:
    cfg = defaults_for(args.command)
    if getattr(args, "config", None):
        cfg.update(load_config(args.config))
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = _coerce(key, value)
    return cfg


def _floats(text, key):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"key '{key}': expected comma-separated numbers, got {text!r}") from None


# ----------------------------------------------------------- builders
def operator_n(cfg) -> int:
    n = cfg["operator.n"]
    return PRESET_CHARTS.get(cfg["preset"], {}).get("n", 4) if n is None else n


def build_manifold(cfg, preset) -> DiscreteManifold:
    base = PRESET_CHARTS[preset]
    n = operator_n(cfg)
    kind = cfg["chart.kind"] or base["kind"]
    L = cfg["chart.L"] if cfg["chart.L"] is not None else base["L"]
    dims = cfg["chart.dims"] if cfg["chart.dims"] is not None else base["dims"]
    if dims is not None and dims >= n:
        dims = None
    try:
        if kind == "sphere":
            return DiscreteManifold.sphere_chart(n, cfg["chart.N"], L)
        return DiscreteManifold(kind, n, cfg["chart.N"], float(L), dims)
    except DomainError as exc:
        raise ConfigError(f"chart: {exc}") from None


def build_spec(cfg, manifold) -> eq.EquationSpec:
    preset = cfg["preset"]
    k, l, t, s = cfg["operator.k"], cfg["operator.l"], cfg["operator.t"], cfg["operator.s"]
    if preset == "schouten":
        return eq.schouten_quotient_spec(manifold, k, l)
    if preset == "lc_schouten":
        return eq.lc_schouten_spec(manifold, k, t, s)
    if preset == "optics":
        return eq.optics_spec(manifold)
    if preset == "gauss_flat":
        return eq.gauss_flat_spec(manifold)
    if preset == "gauss_sphere":
        return eq.gauss_sphere_spec(manifold)
    return eq.laplace_spec(manifold, B=np.broadcast_to(np.eye(manifold.n), manifold.shape + (manifold.n, manifold.n)).copy())


def field_expression(cfg, preset) -> str:
    name = cfg["manufactured"]
    table = FIELDS.get(preset, {})
    if name in table:
        return table[name]
    if name == "bubble":
        # exact solution of the flat Schouten problem with constant f
        r2 = "+".join(f"x{i + 1}**2" for i in range(cfg["operator.n"] or 3))
        return f"log((1+9*({r2}))/6)+0.5*log(2*{cfg['estimate.f']!r})"
    if name == "zero":
        return "0"
    return name


def header(cfg, command) -> str:
    return f"# hessbound {command} preset={cfg['preset']} seed={cfg['seed']}"


def _write(outdir, name, text):
    if outdir is None:
        return
    path = Path(outdir)
    path.mkdir(parents=True, exist_ok=True)
    (path / name).write_text(text + "\n", encoding="utf-8")


# ------------------------------------------------------------ commands
def run_symcheck(cfg, out) -> int:
    n, k, l = operator_n(cfg), cfg["operator.k"], cfg["operator.l"]
    kind = cfg["operator.kind"]
    if kind == "quotient":
        op = symfunc.OperatorSpec.quotient(n, k, l)
    elif kind == "lincomb":
        op = symfunc.OperatorSpec.lincomb(n, k, cfg["operator.t"], cfg["operator.s"])
    else:
        op = symfunc.OperatorSpec.sigma_root(n, k)
    count = cfg["symcheck.samples"]
    seed = cfg["seed"]
    lam = symfunc.sample_cone(op.cone, n, count, seed=seed)
    rep = ConditionReport(f"symmetric-function battery for {op.label()} on {count} samples")
    val = symfunc.F_eval(op, lam)
    grad = symfunc.F_grad(op, lam)
    euler = np.abs(np.sum(lam * grad, axis=-1) - val) / (1 + np.abs(val))
    rep.add("euler identity", bool(np.all(euler <= 1e-10)), float(euler.max()), "|sum l_i F_i - F| / (1+|F|) <= 1e-10")
    gsum = grad.sum(axis=-1)
    rep.add("gradient sum >= 1", bool(np.all(gsum >= 1 - 1e-10)), float(gsum.min()), "min sum_i F_i")
    worst = 0.0
    for theta in (0.5, 2.0, 10.0):
        worst = max(worst, float(np.max(np.abs(symfunc.F_eval(op, theta * lam) - theta * val) / (theta * val))))
    rep.add("homogeneity", worst <= 1e-12, worst, "theta in {0.5, 2, 10}")
    perm = np.random.default_rng(seed).permutation(n)
    sym = float(np.max(np.abs(symfunc.F_eval(op, lam[:, perm]) - val) / val))
    rep.add("permutation symmetry", sym <= 1e-12, sym, "relative change under a fixed permutation")
    for item in symfunc.check_structure(op, lam[: min(count, 1000)]).items:
        rep.add(item.name, item.passed, item.worst, item.detail)
    if op.mu0 is not None:
        ca = symfunc.check_condition_A(op, lam)
        rep.add("condition (A)", ca.passed, ca.items[0].worst, f"mu0={op.mu0:.6g} mu1={op.mu1:.6g}")
    if op.cone.kind == "positive":
        nm_ok = all(bool(np.all(symfunc.check_newton_maclaurin(lam, kk, m))) for kk in range(2, op.k + 1) for m in range(1, kk))
        rep.add("newton-maclaurin", nm_ok, float("nan"), f"all 1 <= m < k' <= {op.k}")
        if op.k >= 2:
            rep.add("gamma2 eigenvalue bound", bool(np.all(symfunc.gamma2_eigen_bound(lam))), float("nan"), "")
        nested = all(bool(np.all(symfunc.in_cone(lam, symfunc.ConeSpec.positive(m)))) for m in range(1, op.k))
        rep.add("cone nesting", nested, float("nan"), "")
    out.write(header(cfg, "symcheck") + "\n" + rep.table() + "\n")
    _write(cfg["output.dir"], "symcheck.txt", rep.table())
    return 0 if rep.passed else 1


def _solve_state(cfg, spec):
    preset = cfg["preset"]
    ue = FieldExpr(field_expression(cfg, preset), spec.manifold)
    ustar = ue if cfg["mode"] == "analytic" else ScalarField(ue.values(), spec.manifold)
    spec_m, ufield = eq.manufacture(spec, ustar)
    u0 = perturbed_guess(ufield, cfg["noise"], seed=cfg["seed"]) if cfg["noise"] > 0 else ufield
    scfg = SolveConfig(
        max_iters=cfg["solver.max_iters"],
        residual_tol=cfg["solver.residual_tol"],
        cone_margin=cfg["solver.cone_margin"],
        linear_solver=cfg["solver.linear_solver"],
        seed=cfg["seed"],
    )
    steps = cfg["solver.continuation_steps"]
    if steps > 1:
        coef0 = eq.manufactured_f(spec, u0)
        coef1 = np.asarray(spec_m.coef_grid)
        report = continuation_solve(lambda tau: spec_m.with_coef((1 - tau) * coef0 + tau * coef1), u0, steps, scfg)
    else:
        report = newton_solve(spec_m, u0, scfg)
    return spec_m, ufield, report


def run_solve(cfg, out) -> int:
    m = build_manifold(cfg, cfg["preset"])
    spec = build_spec(cfg, m)
    spec_m, ufield, report = _solve_state(cfg, spec)
    err = float(np.max(np.abs(report.final_u.values - ufield.values)))
    lines = [header(cfg, "solve"), "key,value"]
    for key, value in [
        ("operator", spec.operator.label()),
        ("chart", f"{m.kind} n={m.n} d={m.d} N={m.N} L={m.L!r}"),
        ("status", "converged" if report.converged else "not converged"),
        ("iterations", report.iterations),
        ("final_residual", f"{report.residual_history[-1]:.6e}"),
        ("min_cone_margin", f"{report.min_cone_margin_seen:.6e}"),
        ("error_vs_manufactured", f"{err:.6e}"),
        ("reason", report.reason),
    ]:
        lines.append(f"{key},{value}")
    out.write("\n".join(lines) + "\n")
    if cfg["output.dir"] is not None:
        _write(cfg["output.dir"], "solve_report.json", report.to_text())
        _write(cfg["output.dir"], "solve_table.csv", "\n".join(lines))
        save_field(Path(cfg["output.dir"]) / "u.grid", report.final_u)
    return 0 if report.converged else 1


def _estimate_state(cfg):
    """A solved state for the local estimate families.

    The bubble is Newton-solved with constant ``f``; any other field is
    manufactured on the grid.
    """
    preset = cfg["preset"]
    m = build_manifold(cfg, preset)
    spec = build_spec(cfg, m)
    ue = FieldExpr(field_expression(cfg, preset), m)
    u0 = ScalarField(ue.values(), m)
    if cfg["manufactured"] != "bubble":
        return eq.manufacture(spec, u0)
    spec = spec.with_coef(cfg["estimate.f"])
    scfg = SolveConfig(max_iters=cfg["solver.max_iters"], residual_tol=cfg["solver.residual_tol"],
                       linear_solver=cfg["solver.linear_solver"], seed=cfg["seed"])
    report = newton_solve(spec, u0, scfg)
    if not report.converged:
        raise HessboundError(f"bubble solve failed: {report.reason}")
    return spec, report.final_u


def _maxprinciple_family(cfg):
    m = DiscreteManifold.euclidean_domain(2, cfg["chart.N"], 2.0)
    spec = eq.gauss_flat_spec(m)
    omega = m.ball_mask(0.9)
    bump = "Piecewise((0.36*(1-(x1**2+x2**2)/0.36)**4/8, x1**2+x2**2<0.36), (0, True))"

    def member(s):
        u = ScalarField(FieldExpr(f"(x1**2+x2**2)/2 + {s}*{bump}", m).values(), m)
        spec_m, _ = eq.manufacture(spec, u)
        return spec_m, u

    cal = [es.max_principle_report(u, sp_, omega, seed=cfg["seed"]) for sp_, u in map(member, (0.1, 0.3, 0.5, 0.7, 0.8))]
    C4 = es.fit_global_constant(cal)
    reports = []
    for s in (0.2, 0.4, 0.6, 0.75, 0.85):
        sp_, u = member(s)
        rep = es.max_principle_report(u, sp_, omega, C4=C4, seed=cfg["seed"])
        rep.inputs["t"] = s
        reports.append(rep)
    return reports, C4.kappa


def run_estimate(cfg, out) -> int:
    family = cfg["estimate.family"]
    if cfg["estimate.f"] is None:
        cfg = dict(cfg, **{"estimate.f": FAMILY_F.get(family, 0.5)})
    seed_line = header(cfg, "estimate") + f" family={family}"
    if family == "maxprinciple":
        reports, kappa = _maxprinciple_family(cfg)
        cols = ("case", "t", "quantity", "bound", "ratio", "boundary_sup", "C4", "flag", "c_inf", "c_sup", "e_sup", "eps")
        table = es.report_table(reports, cols)
        ok = all(r.inputs["flag"] for r in reports)
        summary = f"# kappa={kappa:.10g} all_flags={ok}"
    else:
        spec, u = _estimate_state(cfg)
        case = cfg["estimate.case"]
        if family == "radius":
            radii = _floats(cfg["estimate.radii"], "estimate.radii")
            reports = es.radius_sweep(u, spec, radii, case)
            cols = ("case", "r", "quantity", "bound", "ratio", "direct_ratio", "c_inf", "c_sup", "sup_exp_m2u")
            spread = es.band([r.ratio for r in reports])
            ok = spread < 2.0
            summary = f"# ratio_band={spread:.10g} within_2x={ok}"
        else:
            a, b, cnt = _floats(cfg["estimate.ts"], "estimate.ts")
            ts = np.geomspace(a, b, int(cnt))
            reports = es.cinf_sweep(spec, u, ts, cfg["estimate.r"], case)
            cols = ("case", "r", "t", "quantity", "bound", "ratio", "coef_inf", "c_sup", "sup_exp_m2u")
            slope = es.relative_slope([1.0 / r.inputs["coef_inf"] for r in reports], [r.ratio for r in reports])
            ok = abs(slope) <= 0.05
            summary = f"# relative_slope={slope:.10g} within_5pct={ok}"
        table = es.report_table(reports, cols)
    text = "\n".join([seed_line, table, summary])
    out.write(text + "\n")
    _write(cfg["output.dir"], f"estimate_{family}.csv", text)
    return 0 if ok else 1


def run_audit(cfg, out) -> int:
    preset = cfg["preset"]
    m = build_manifold(cfg, preset)
    spec = build_spec(cfg, m)
    case = cfg["audit.case"] or (spec.cases[0] if spec.cases else "T1a")
    ue = FieldExpr(field_expression(cfg, preset), m)
    spec_m, u = eq.manufacture(spec, ScalarField(ue.values(), m))
    rep = es.hypothesis_audit(spec_m, u, case, seed=cfg["seed"])
    out.write(header(cfg, "audit") + f" case={case}\n" + rep.table() + "\n")
    _write(cfg["output.dir"], f"audit_{case}.txt", rep.table())
    return 0 if rep.passed else 1


RUNNERS = {"symcheck": run_symcheck, "solve": run_solve, "estimate": run_estimate, "audit": run_audit}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    if args.dump_defaults:
        out.write(dump_defaults(args.command))
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = resolve_config(args)
        return RUNNERS[args.command](cfg, out)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 2
    except (HessboundError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

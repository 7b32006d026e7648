"""Command-line entry point: verification and solve workflows with JSON reports.

Every subcommand writes one JSON report (stdout or ``--out``) whose content
depends only on the configuration and seed.  Wall-clock timings go to a
separate ``<out>.timings.json`` file (or stderr) so reports stay byte-identical
across runs.  Exit status is 0 exactly when every check in the report passes.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .discrete_geometry import (
    GREEN_PAIRS,
    Discretization,
    DomainSpec,
    FieldSpace,
    build_domain,
    export_matrix_market,
    greens_convergence,
)
from .fiber_algebra import (
    Bidegree,
    bianchi_interior_matrix,
    bianchi_wedge_matrix,
    interior_matrix,
    product_rule_suite,
    random_metric,
    relation_suite,
    wedge_matrix,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
COMMANDS = ("algebra-check", "symbol-check", "assemble", "greens-check", "correct",
            "cohomology", "solve-bvp")

DEFAULT_TOLERANCES = {
    "algebra": 1e-12,
    "projector": 1e-10,
    "symbol_sv": 1e-8,
    "nilpotency": 1e-8,
    "recursion": 1e-10,
    "green_factor_low": 1.5,
    "green_factor_high": 3.0,
    "kernel_gap": 1e3,
    "bvp": 1e-6,
}

DOMAIN_KEYS = {"chart", "n", "d", "metric", "diag", "phi", "phi_expression", "n_theta",
               "boundary_order", "connection"}
CONFIG_KEYS = {"command", "seed", "domain", "chain", "tolerances", "d", "samples", "op",
               "bidegree", "kind", "rank", "level", "m", "sweep", "trials", "data",
               "manufactured", "expect"}
CHAIN_KEYS = {"kind", "m", "level"}


class ConfigError(ValueError):
    pass


# config ------------------------------------------------------------------------

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read config {p}: {exc.strerror}") from exc
    try:
        data = tomllib.loads(raw.decode()) if p.suffix == ".toml" else json.loads(raw)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"malformed config {p}: {exc}") from exc
    _validate(data)
    return data


def _validate(data: dict) -> None:
    for key in data:
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    for key in data.get("domain", {}):
        if key not in DOMAIN_KEYS:
            raise ConfigError(f"unknown config key 'domain.{key}'")
    for key in data.get("chain", {}):
        if key not in CHAIN_KEYS:
            raise ConfigError(f"unknown config key 'chain.{key}'")
    for key, val in data.get("tolerances", {}).items():
        if key not in DEFAULT_TOLERANCES:
            raise ConfigError(f"unknown config key 'tolerances.{key}'")
        if not isinstance(val, (int, float)) or not val > 0:
            raise ConfigError(f"config key 'tolerances.{key}' must be a positive number")


def _merged(args, cfg: dict, key: str, default=None, section: str | None = None):
    """CLI flag if given, else config value, else default."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    src = cfg.get(section, {}) if section else cfg
    return src.get(key, default)


def tolerances(args, cfg: dict) -> dict:
    out = {k: {"value": v, "source": "default"} for k, v in DEFAULT_TOLERANCES.items()}
    for k, v in cfg.get("tolerances", {}).items():
        out[k] = {"value": float(v), "source": "config"}
    for item in args.tol or []:
        if "=" not in item:
            raise ConfigError(f"tolerance override {item!r} must look like name=value")
        k, v = item.split("=", 1)
        if k not in DEFAULT_TOLERANCES:
            raise ConfigError(f"unknown tolerance {k!r}")
        try:
            val = float(v)
        except ValueError:
            raise ConfigError(f"tolerance {k!r} must be a number") from None
        if not val > 0:
            raise ConfigError(f"tolerance {k!r} must be positive")
        out[k] = {"value": val, "source": "override"}
    return out


def domain_spec(args, cfg: dict) -> DomainSpec:
    data = dict(cfg.get("domain", {}))
    for key in ("chart", "n", "metric", "phi", "n_theta", "boundary_order"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if getattr(args, "domain_d", None) is not None:
        data["d"] = args.domain_d
    if getattr(args, "diag", None):
        data["diag"] = args.diag.split(",")
    if getattr(args, "connection", None):
        data["connection"] = json.loads(args.connection)
    try:
        return DomainSpec.from_dict(data)
    except TypeError as exc:
        raise ConfigError(f"bad domain configuration: {exc}") from exc


def parse_sweep(text: str | None) -> list | None:
    if not text:
        return None
    key, _, vals = text.partition("=")
    if key.strip() != "n" or not vals:
        raise ConfigError("sweep must look like n=8,16,24")
    return [int(v) for v in vals.split(",")]


def parse_bidegree(text, d: int) -> Bidegree:
    if isinstance(text, (list, tuple)):
        k, m = text
    else:
        k, m = (int(v) for v in str(text).split(","))
    return Bidegree(int(k), int(m), d)


# report ------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy with floats rounded to 10 significant digits."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x) or math.isinf(x):
            return str(x)
        return float(f"{x:.10g}")
    return obj


class Report:
    def __init__(self, command: str, inputs: dict, tols: dict, seed: int):
        self.command = command
        self.inputs = inputs
        self.tols = tols
        self.seed = seed
        self.checks = []
        self.results = {}
        self.timings = {}

    def check(self, name: str, passed: bool, value=None, tolerance=None) -> None:
        self.checks.append({"name": name, "pass": bool(passed), "value": value,
                            "tolerance": tolerance})

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def to_dict(self) -> dict:
        return _clean({"schema_version": SCHEMA_VERSION, "version": __version__,
                       "command": self.command, "seed": self.seed, "inputs": self.inputs,
                       "tolerances": self.tols, "results": self.results,
                       "checks": self.checks, "pass": self.passed})

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# commands ----------------------------------------------------------------------

def cmd_algebra(args, cfg, rep: Report) -> None:
    d = int(_merged(args, cfg, "d", 3))
    samples = int(_merged(args, cfg, "samples", 100))
    tol = rep.tols["algebra"]["value"]
    rec = relation_suite(d, samples, rep.seed, tol=tol)
    rec += product_rule_suite(d, max(1, samples // 5), rep.seed, tol=tol)
    by_rel = {}
    for r in rec:
        by_rel[r["relation"]] = max(by_rel.get(r["relation"], 0.0), r["max_error"])
    for name, err in sorted(by_rel.items()):
        rep.check(f"relation {name}", err <= tol, err, tol)
    rng = np.random.default_rng(rep.seed)
    g = random_metric(d, rng)
    ptol = rep.tols["projector"]["value"]
    worst = 0.0
    for k in range(d + 1):
        for m in range(d + 1):
            bd = Bidegree(k, m, d)
            if k < d and m > k:
                tgt = bd.shift(1, 0)
                for _ in range(10):
                    psi = g.bianchi_projector(bd) @ rng.standard_normal(bd.dim)
                    xi = rng.standard_normal(d)
                    lhs = bianchi_wedge_matrix(bd, xi) @ psi
                    rhs = g.bianchi_projector(tgt) @ wedge_matrix(bd, xi) @ psi
                    worst = max(worst, float(np.abs(lhs - rhs).max()))
            if k > 0 and m < k:
                tgt = bd.shift(-1, 0)
                for _ in range(10):
                    psi = g.bianchi_projector(bd) @ rng.standard_normal(bd.dim)
                    xi = rng.standard_normal(d)
                    lhs = bianchi_interior_matrix(bd, xi, g) @ psi
                    rhs = g.bianchi_projector(tgt) @ interior_matrix(bd, g.sharp(xi)) @ psi
                    worst = max(worst, float(np.abs(lhs - rhs).max()))
    rep.check("explicit Bianchi projection formulas", worst <= ptol, worst, ptol)
    rep.results = {"d": d, "samples": samples, "relations": by_rel, "projector_formula_error": worst}


def cmd_symbol(args, cfg, rep: Report) -> None:
    from .symbol_check import chain_level, od_ellipticity_report, symbol_nilpotency

    chain = cfg.get("chain", {})
    kind = args.chain or chain.get("kind") or "bianchi"
    d = int(_merged(args, cfg, "d", 2))
    m = int(args.m if args.m is not None else chain.get("m", cfg.get("m", 1)))
    level = int(args.level if args.level is not None else chain.get("level", cfg.get("level", 0)))
    samples = int(_merged(args, cfg, "samples", 200))
    expect = _merged(args, cfg, "expect", "elliptic")
    if kind == "bianchi" and level == m:
        spec = chain_level("hessian_junction", d, level, m, samples=samples, seed=rep.seed)
    elif kind == "de_rham":
        spec = chain_level("de_rham", d, level, 0, samples=samples, seed=rep.seed)
    else:
        spec = chain_level(kind, d, level, m, samples=samples, seed=rep.seed)
    verdict = od_ellipticity_report(spec)
    want = expect == "elliptic"
    rep.results = {"level": {"name": spec.name, "d": d, "k": spec.k, "m": spec.m,
                             "interior": list(spec.interior), "boundary": list(spec.boundary),
                             "domain": spec.domain},
                   "verdict": verdict.to_dict()}
    rep.check(f"verdict is {expect}", verdict.elliptic == want and not verdict.indeterminate,
              verdict.boundary_min_sv, rep.tols["symbol_sv"]["value"])
    if kind in ("de_rham", "bianchi"):
        nil = symbol_nilpotency(kind, d, m if kind == "bianchi" else 0, seed=rep.seed)
        rep.results["nilpotency"] = nil
        worst = max([r["max_error"] for r in nil], default=0.0)
        rep.check("symbol nilpotency", worst <= 1e-12, worst, 1e-12)


def _field_space(args, cfg, d) -> FieldSpace:
    bd = parse_bidegree(_merged(args, cfg, "bidegree", "0,0"), d)
    kind = _merged(args, cfg, "kind", "full")
    rank = int(_merged(args, cfg, "rank", 1))
    return FieldSpace(bd, kind, rank)


def cmd_assemble(args, cfg, rep: Report) -> None:
    spec = domain_spec(args, cfg)
    disc = Discretization(build_domain(spec))
    op = _merged(args, cfg, "op", "d")
    space = _field_space(args, cfg, spec.d)
    A = disc.assemble(op, space)
    rep.results = {"op": op, "source": str(A.source), "target": str(A.target),
                   "shape": list(A.matrix.shape), "nnz": int(A.matrix.nnz), "order": A.order}
    rep.check("operator assembled", True)
    if args.export_ops:
        out = Path(args.export_ops)
        out.mkdir(parents=True, exist_ok=True)
        export_matrix_market(A, out / f"{op}.mtx")
        rep.results["exported"] = [f"{op}.mtx"]


def cmd_greens(args, cfg, rep: Report, timings: dict) -> None:
    spec = domain_spec(args, cfg)
    op = _merged(args, cfg, "op", "dG")
    if op not in GREEN_PAIRS:
        raise ConfigError(f"greens-check supports {sorted(GREEN_PAIRS)}, not {op!r}")
    space = _field_space(args, cfg, spec.d)
    ns = parse_sweep(_merged(args, cfg, "sweep")) or [8, 16, 32]
    trials = int(_merged(args, cfg, "trials", 5))
    res = greens_convergence(spec, op, space, ns, trials, rep.seed)
    orders = [math.log2(f) if f > 0 and np.isfinite(f) else None for f in res["factors"]]
    res["orders"] = orders
    rep.results = res
    lo, hi = rep.tols["green_factor_low"]["value"], rep.tols["green_factor_high"]["value"]
    for a, b, f in zip(ns, ns[1:], res["factors"]):
        rep.check(f"residual factor n={a}->{b}", lo <= f <= hi, f, [lo, hi])
    if args.csv:
        _write_csv(args.csv, ["n", "residual"], zip(ns, res["residuals"]))


def _chain_args(args, cfg) -> tuple:
    chain = cfg.get("chain", {})
    kind = args.chain or chain.get("kind", "de_rham")
    m = args.m if args.m is not None else chain.get("m", 1)
    return {"bianchi_m": "bianchi", "deRham": "de_rham", "deRhamTwisted": "twisted_de_rham"}.get(
        kind, kind), int(m)


def _build(args, cfg, n=None):
    from .precomplex_engine import build_chain, correct_chain
    spec = domain_spec(args, cfg)
    if n is not None:
        spec = spec.with_n(n)
    kind, m = _chain_args(args, cfg)
    return correct_chain(build_chain(kind, spec, m))


def _chain_report(ch, tols) -> tuple:
    nil = ch.nilpotency()
    info = {"chain": ch.spec.name, "spaces": [str(s) for s in ch.spec.spaces],
            "orders": ch.spec.orders, "sizes": [int(M.shape[0]) for M in ch.spec.masses],
            "correction_norms": ch.correction_norms(), "recursion_defects": ch.recursion_defect,
            "ranks": [p.rank for p in ch.projectors],
            "rank_ambiguous": [p.ambiguous for p in ch.projectors], "nilpotency": nil,
            "rank_tolerance": ch.tau}
    checks = []
    for r in nil:
        checks.append((f"corrected nilpotency level {r['level']}",
                       r["corrected"] <= tols["nilpotency"]["value"], r["corrected"],
                       tols["nilpotency"]["value"]))
    worst = max(ch.recursion_defect)
    checks.append(("correction recursion", worst <= tols["recursion"]["value"], worst,
                   tols["recursion"]["value"]))
    checks.append(("ranks unambiguous", not any(p.ambiguous for p in ch.projectors), None, None))
    return info, checks


def cmd_correct(args, cfg, rep: Report) -> None:
    ch = _build(args, cfg)
    info, checks = _chain_report(ch, rep.tols)
    rep.results = info
    for c in checks:
        rep.check(*c)
    if args.export_ops:
        export_chain(ch, Path(args.export_ops), info)
        rep.results["exported_to_manifest"] = "manifest.json"


def export_chain(ch, out: Path, info: dict) -> None:
    import scipy.io
    import scipy.sparse as sps
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for k in range(ch.nlevels):
        for name, mat in (("A", ch.A[k]), ("corrected", ch.corrected[k]),
                          ("correction", ch.corrections[k]), ("P", ch.projectors[k].P)):
            fname = f"{name}_{k}.mtx"
            scipy.io.mmwrite(str(out / fname), sps.csr_matrix(np.where(np.abs(mat) > 1e-14, mat, 0.0)))
            files.append(fname)
    for k, M in enumerate(ch.spec.masses):
        fname = f"mass_{k}.mtx"
        scipy.io.mmwrite(str(out / fname), M)
        files.append(fname)
    manifest = dict(info, files=files)
    (out / "manifest.json").write_text(json.dumps(_clean(manifest), indent=2, sort_keys=True) + "\n")


def cmd_cohomology(args, cfg, rep: Report) -> None:
    ns = parse_sweep(_merged(args, cfg, "sweep"))
    gap = rep.tols["kernel_gap"]["value"]
    rows = []
    results = []
    for n in (ns or [None]):
        ch = _build(args, cfg, n)
        dims = []
        for h in (ch.harmonic(k) for k in range(ch.nlevels + 1)):
            d = h.to_dict()
            dims.append(d)
            ok = h.agree and min(h.adjoint_route.gap, h.projector_route.gap) >= gap
            rep.check(f"n={ch.spec.domain.n} level {h.level} dimension certified", ok,
                      min(h.adjoint_route.gap, h.projector_route.gap), gap)
            rows.append((ch.spec.domain.n, h.level, d["dim"], h.adjoint_route.gap,
                         h.projector_route.gap))
        results.append({"n": ch.spec.domain.n, "chain": ch.spec.name,
                        "dims": [d["dim"] for d in dims], "levels": dims})
    rep.results = {"runs": results}
    if args.csv:
        _write_csv(args.csv, ["n", "level", "dim", "gap_adjoint_route", "gap_projector_route"], rows)


def cmd_bvp(args, cfg, rep: Report) -> None:
    from .precomplex_engine import IntegrabilityError, manufactured_data, solve_bvp
    ch = _build(args, cfg)
    chain = cfg.get("chain", {})
    k = int(args.level if args.level is not None else chain.get("level", cfg.get("level", 0)))
    if not 0 <= k <= ch.nlevels:
        raise ConfigError(f"level {k} outside the chain (0..{ch.nlevels})")
    data_path = _merged(args, cfg, "data")
    if data_path:
        raw = json.loads(Path(data_path).read_text())
        get = lambda key: None if raw.get(key) is None else np.asarray(raw[key], dtype=float)
        chi, xi, phi = get("chi"), get("xi"), get("phi")
        source = {"data": str(data_path)}
    else:
        disc = Discretization(build_domain(ch.spec.domain))
        psi = disc.smooth_field(ch.spec.spaces[k], rep.seed)
        chi, xi, phi = manufactured_data(ch, k, psi)
        source = {"manufactured": True}
    tol = rep.tols["bvp"]["value"]
    try:
        sol = solve_bvp(ch, k, chi, xi, phi, tol=tol)
    except IntegrabilityError as exc:
        rep.results = dict(source, level=k, **exc.solution.to_dict())
        for c in exc.solution.violated:
            rep.check(f"integrability {c}", False, exc.solution.conditions[c], tol)
        return
    rep.results = dict(source, level=k, **sol.to_dict())
    for c in ("condition_1", "condition_2", "condition_3"):
        rep.check(f"integrability {c}", sol.conditions[c] <= tol, sol.conditions[c], tol)
    r = sol.residuals["relative_equation_residual"]
    rep.check("equation residual", r <= tol, r, tol)
    if not data_path:
        M = ch.weights[k].M
        H = ch.harmonic(k).basis
        diff = sol.psi - psi
        diff = diff - H @ (H.T @ (M @ diff))
        err = float(np.sqrt(diff @ M @ diff / (psi @ M @ psi)))
        rep.results["recovery_error"] = err
        rep.check("manufactured recovery", err <= tol, err, tol)
    if args.out_field:
        Path(args.out_field).write_text(json.dumps({"psi": _clean(sol.psi.tolist()),
                                                    "space": str(ch.spec.spaces[k])}) + "\n")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else (f"{v:.10g}" if isinstance(v, float) else v) for v in r])


# parser ------------------------------------------------------------------------

def _domain_flags(p) -> None:
    p.add_argument("--chart", choices=("box", "annulus"))
    p.add_argument("--n", type=int, help="nodes per axis")
    p.add_argument("--domain-d", type=int, dest="domain_d", help="dimension of the box chart")
    p.add_argument("--metric", choices=("flat", "polar", "diagonal", "conformal"))
    p.add_argument("--phi", help="conformal factor expression in x1, x2, x3")
    p.add_argument("--diag", help="comma-separated diagonal metric expressions")
    p.add_argument("--n-theta", type=int, dest="n_theta")
    p.add_argument("--boundary-order", type=int, choices=(1, 2), dest="boundary_order")
    p.add_argument("--connection", help="bundle connection as JSON (one entry per coordinate)")


def _chain_flags(p) -> None:
    p.add_argument("--chain", help="de_rham | twisted_de_rham | bianchi | calabi | hessian")
    p.add_argument("--m", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="doubleforms", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="report path (default: stdout)")
    common.add_argument("--tol", action="append", metavar="NAME=VALUE", help="tolerance override")
    common.add_argument("--csv", help="CSV table for sweeps")

    p = sub.add_parser("algebra-check", parents=[common], help="fiber algebra identities")
    p.add_argument("--d", type=int)
    p.add_argument("--samples", type=int)

    p = sub.add_parser("symbol-check", parents=[common], help="overdetermined ellipticity of a level")
    p.add_argument("--chain", help="de_rham | bianchi | bianchi_dirichlet | H_normal | "
                                   "H_tangential | hessian_junction | broken")
    p.add_argument("--m", type=int)
    p.add_argument("--level", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--expect", choices=("elliptic", "not-elliptic"))

    p = sub.add_parser("assemble", parents=[common], help="assemble one operator")
    _domain_flags(p)
    p.add_argument("--op")
    p.add_argument("--bidegree", help="k,m")
    p.add_argument("--kind", choices=("full", "bianchi", "symmetric"))
    p.add_argument("--rank", type=int)
    p.add_argument("--export-ops", dest="export_ops", help="directory for Matrix Market files")

    p = sub.add_parser("greens-check", parents=[common], help="Green formula residual sweep")
    _domain_flags(p)
    p.add_argument("--op", choices=sorted(GREEN_PAIRS))
    p.add_argument("--bidegree")
    p.add_argument("--kind", choices=("full", "bianchi", "symmetric"))
    p.add_argument("--rank", type=int)
    p.add_argument("--sweep", help="n=8,16,32")
    p.add_argument("--trials", type=int)

    for name, hlp in (("correct", "build the corrected chain"),
                      ("cohomology", "harmonic dimensions per level"),
                      ("solve-bvp", "overdetermined boundary-value problem")):
        p = sub.add_parser(name, parents=[common], help=hlp)
        _domain_flags(p)
        _chain_flags(p)
        if name == "correct":
            p.add_argument("--export-ops", dest="export_ops")
        if name == "cohomology":
            p.add_argument("--sweep", help="n=8,16,24")
        if name == "solve-bvp":
            p.add_argument("--level", type=int)
            p.add_argument("--data", help="JSON file with chi, xi, phi coefficient arrays")
            p.add_argument("--out-field", dest="out_field", help="write the solution field here")
    return parser


def _inputs(args, cfg) -> dict:
    flags = {k: v for k, v in vars(args).items()
             if v is not None and k not in ("out", "config", "csv", "export_ops", "out_field")}
    return {"flags": flags, "config": cfg}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if cfg.get("command") not in (None, args.command):
            raise ConfigError(f"config key 'command' is {cfg['command']!r}, not {args.command!r}")
        seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
        tols = tolerances(args, cfg)
        rep = Report(args.command, _inputs(args, cfg), tols, seed)
        t0 = time.perf_counter()
        timings = {}
        handler = {"algebra-check": cmd_algebra, "symbol-check": cmd_symbol,
                   "assemble": cmd_assemble, "correct": cmd_correct,
                   "cohomology": cmd_cohomology, "solve-bvp": cmd_bvp}.get(args.command)
        if args.command == "greens-check":
            cmd_greens(args, cfg, rep, timings)
        else:
            handler(args, cfg, rep)
        timings["total_seconds"] = round(time.perf_counter() - t0, 3)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    text = rep.dumps()
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        Path(str(out) + ".timings.json").write_text(json.dumps(timings, sort_keys=True) + "\n")
    else:
        sys.stdout.write(text)
        print(json.dumps({"timings": timings}), file=sys.stderr)
    return 0 if rep.passed else 1


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()

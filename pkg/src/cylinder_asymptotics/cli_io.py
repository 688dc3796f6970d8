"""Command-line entry points and deterministic report writing.

Every command writes report.json (results plus a config echo and the library
version), table.csv and plotdata.csv into the output directory. Floats are
written with 12 significant digits, JSON keys are sorted and CSV uses CRLF
line endings, so identical configs give byte-identical files.
"""

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ArtifactError, ConfigError, DomainError

FLOAT_DIGITS = 12
COMMANDS = ("radial", "kernel", "indexset", "solve", "expand", "verify")


# ---------------------------------------------------------------- configuration


@dataclass
class RunConfig:
    command: str
    n: int = 3
    k: int = 2
    xi0: float = None
    xi_t0: float = 0.0
    h: float = None
    T: float = None
    nodes: int = 96
    degree: int = None
    order: int = None
    cutoff: float = 4.0
    seed: int = 0
    out: str = "out"
    perturbation: dict = None
    terms: list = None
    source: str = "synthetic"
    window: list = None
    criteria: list = None

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; choose from {', '.join(COMMANDS)}")
        for name in ("n", "k", "nodes", "seed"):
            _require_int(self, name)
        for name in ("degree", "order"):
            if getattr(self, name) is not None:
                _require_int(self, name)
        for name in ("xi0", "xi_t0", "h", "T", "cutoff"):
            value = getattr(self, name)
            if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
                raise ConfigError(f"{name} must be a number")
            if value is not None and not math.isfinite(value):
                raise ConfigError(f"{name} must be finite")
        if self.T is not None and self.T <= 0:
            raise ConfigError("T must be positive")
        if self.cutoff <= 0:
            raise ConfigError("cutoff must be positive")
        if self.source not in ("synthetic", "newton"):
            raise ConfigError("source must be 'synthetic' or 'newton'")
        if self.perturbation is not None:
            if not isinstance(self.perturbation, dict):
                raise ConfigError("perturbation maps harmonic index -> coefficient")
            try:
                self.perturbation = {int(i): float(a) for i, a in self.perturbation.items()}
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad perturbation entry: {exc}") from None
        if self.terms is not None:
            if not isinstance(self.terms, list) or any(not isinstance(t, list) or len(t) != 4 for t in self.terms):
                raise ConfigError("terms is a list of [rate, t_power, harmonic_index, coefficient]")
            self.terms = [[float(r), int(j), int(i), float(c)] for r, j, i, c in self.terms]
        if self.window is not None:
            if not isinstance(self.window, list) or len(self.window) != 2 or not self.window[0] < self.window[1]:
                raise ConfigError("window is [start, end] with start < end")
            self.window = [float(x) for x in self.window]
        if self.criteria is not None:
            if not isinstance(self.criteria, list) or any(c not in range(1, 10) for c in self.criteria):
                raise ConfigError("criteria lists numbers from 1 to 9")
        return self

    def echo(self):
        return asdict(self)


def _require_int(cfg, name):
    value = getattr(cfg, name)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer")


def load_config(command, path=None, overrides=None):
    """RunConfig from an optional JSON file plus command-line overrides; unknown keys are rejected."""
    data = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if data.get("command", command) != command:
        raise ConfigError(f"config is for {data['command']!r}, not {command!r}")
    data["command"] = command
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**data).validate()


# ---------------------------------------------------------------- output


def clean(obj):
    """JSON-ready copy with floats pinned to FLOAT_DIGITS significant digits."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating, Fraction)):
        x = float(obj)
        if not math.isfinite(x):
            return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
        x = float(f"{x:.{FLOAT_DIGITS}g}")
        return 0.0 if x == 0 else x
    return obj


def format_cell(value):
    value = clean(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, dict)):
        return json.dumps(value, sort_keys=True)
    return "" if value is None else str(value)


def write_json(path, payload):
    text = json.dumps(clean(payload), sort_keys=True, indent=2) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_cell(v) for v in row])


def emit(cfg, results, table, plot):
    """Write the three artifacts; table and plot are (header, rows)."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", {"config": cfg.echo(), "version": __version__, "command": cfg.command,
                                     "results": results})
    write_csv(out / "table.csv", *table)
    write_csv(out / "plotdata.csv", *plot)
    return out


# ---------------------------------------------------------------- commands


def _params(cfg):
    from .radial_core import make_params

    return make_params(cfg.n, cfg.k)


def _profile(cfg, p, T, num_per_unit=100):
    from .radial_core import constant_radial, integrate_radial, with_period

    xi0 = constant_radial(p) if cfg.xi0 is None and p.k == 1 else (1.0 if cfg.xi0 is None else cfg.xi0)
    prof = integrate_radial(p, xi0, cfg.xi_t0, (0.0, T), int(num_per_unit * T) + 1)
    if p.regime in ("yamabe", "small"):
        prof = with_period(prof)
    return prof


def cmd_radial(cfg):
    from .radial_core import (first_integral_residual, large_a1, large_a2, middle_slope, radial_expansion)

    p = _params(cfg)
    T = cfg.T or 45.0
    prof = _profile(cfg, p, T)
    res = {"profile": prof.to_dict(), "first_integral_residual": first_integral_residual(prof)}
    rows = []
    if p.regime in ("middle", "large") and prof.a0 is not None:
        m = 4 if cfg.order is None else cfg.order
        exp = radial_expansion(prof, m=m, window=tuple(cfg.window) if cfg.window else None)
        res["expansion"] = exp.to_dict()
        if p.regime == "large":
            a1 = large_a1(p, prof.h, prof.a0)
            res["closed_form"] = {"a1": a1, "a2": large_a2(p, a1)}
        else:
            res["closed_form"] = {"slope": middle_slope(p, prof.h)}
        rows = [(i, nu, a, exp.ladder[i - 1] if i else None) for i, (nu, a) in enumerate(zip(exp.nu, exp.a))]
    step = max(1, len(prof.t) // 400)
    plot = [(t, x, v) for t, x, v in zip(prof.t[::step], prof.xi[::step], prof.xi_t[::step])]
    return res, (["i", "rate", "coefficient", "measured_rate"], rows), (["t", "xi", "xi_t"], plot)


def cmd_kernel(cfg):
    from .linear_ode_kit import kernel_for_mode
    from .sphere_spectral import eigenvalue

    p = _params(cfg)
    T = cfg.T or 40.0
    prof = _profile(cfg, p, T)
    top = 2 if cfg.degree is None else cfg.degree
    lo, hi = cfg.window or (2.0, T - 2.0)
    rows, reports, plot_cols = [], [], []
    for d in range(top + 1):
        lam = float(eigenvalue(p.n, d))
        kb = kernel_for_mode(prof, d, lam, (lo, hi))
        rep = kb.report()
        rep["degree"] = d
        rep["wronskian_constant_spread"] = rep.pop("wronskian_spread")
        reports.append(rep)
        rows.append((d, lam, rep["kind"], rep["rho"], rep["tau"], rep["rho_fit"], rep["tau_fit"],
                     max(rep["residual_plus"], rep["residual_minus"]), rep["resonant"]))
        plot_cols.append(kb)
    ts = plot_cols[0].sample(200)
    plot = []
    values = [(kb.plus(ts)[0], kb.minus(ts)[0]) for kb in plot_cols]
    for j, t in enumerate(ts):
        row = [t]
        for a, b in values:
            row += [a[j], b[j]]
        plot.append(row)
    header = ["t"] + [f"{s}_{d}" for d in range(top + 1) for s in ("psi_plus", "psi_minus")]
    table = (["degree", "lambda", "kind", "rho", "tau", "rho_fit", "tau_fit", "residual", "resonant"], rows)
    return {"profile": prof.to_dict(), "kernels": reports}, table, (header, plot)


def _origin(e):
    if e.is_kernel and e.is_nonlinear:
        return "kernel+nonlinear"
    return "kernel" if e.is_kernel else "nonlinear"


def _witness_text(e, gens, extra):
    if not e.witness:
        return ""
    w, m0 = e.witness[0]
    parts = [f"{c}*{float(gens[j]):.6g}" for j, c in w]
    if m0:
        parts.append(f"{m0}*{float(extra):.6g}")
    return " + ".join(parts)


def cmd_indexset(cfg):
    from .index_sets import compare_with_oracle, index_set_for, interleave_schedule, rates_by_index

    p = _params(cfg)
    h, profile = cfg.h, None
    if p.regime == "middle" and h is None:
        h = _profile(cfg, p, cfg.T or 20.0).h
    if p.regime in ("yamabe", "small") and cfg.xi0 is not None:
        profile = _profile(cfg, p, cfg.T or 60.0)
    iset = index_set_for(p, cfg.cutoff, h, profile, cfg.degree)
    oracle = compare_with_oracle(iset, list(iset.generators))
    degree = max(iset.degrees) if iset.degrees else 1
    schedule = interleave_schedule(p, rates_by_index(p, degree, h, profile), cfg.cutoff)
    rows = [(e.value, _origin(e), [float(iset.generators[j]) for j in e.kernel], _witness_text(e, iset.generators, iset.extra),
             e.extra, e.resonant) for e in iset.elements]
    res = {"params": p.to_dict(), "h": h, "values": iset.values(), "generators": list(iset.generators),
           "extra_generator": iset.extra, "elements": iset.to_rows(), "oracle": oracle,
           "schedule": [s.to_dict() for s in schedule]}
    plot = [(i + 1, v) for i, v in enumerate(iset.values())]
    return res, (["value", "origin", "kernel_rates", "witness", "extra_multiple", "resonant"], rows), (["i", "mu"], plot)


def _solve(cfg, p):
    from .pde_lab import make_bvp, solve_cylinder_bvp

    pert = cfg.perturbation if cfg.perturbation is not None else {1: 0.02 if p.k > 1 else 0.05}
    xi0 = cfg.xi0 if cfg.xi0 is not None else (None if p.k == 1 else 1.0)
    spec = make_bvp(p, T=cfg.T or 24.0, nodes=cfg.nodes, max_degree=4 if cfg.degree is None else cfg.degree,
                    perturbation=pert, xi0=xi0, xi_t0=cfg.xi_t0, tol=1e-12)
    return solve_cylinder_bvp(spec)


def cmd_solve(cfg):
    p = _params(cfg)
    sol = _solve(cfg, p)
    res = {"params": p.to_dict(), "reference": sol.reference.to_dict(), "T": sol.spec.T, "nodes": sol.spec.nodes,
           "max_degree": sol.spec.max_degree, "boundary": sol.spec.boundary, "certificate": sol.certificate.to_dict()}
    t = np.linspace(0.0, sol.spec.T, 241)
    phi = sol.perturbation(t)
    plot = [(ti, s, c0) for ti, s, c0 in zip(t, phi.sup_theta(), phi.coeffs[:, 0])]
    return res, (["t", "index", "coefficient"], sol.to_rows()), (["t", "sup_abs_phi", "mode0_coefficient"], plot)


def _expand_synthetic(cfg, p):
    from .expansion_engine import extract_expansion
    from .pde_lab import synthesize_field
    from .radial_core import constant_radial, integrate_radial
    from .sphere_spectral import build_basis

    if p.k == 1:
        xi0 = constant_radial(p) if cfg.xi0 is None else cfg.xi0
    else:
        xi0 = 1.0 if cfg.xi0 is None else cfg.xi0
    T = cfg.T or 20.0
    prof = integrate_radial(p, xi0, cfg.xi_t0, (0.0, T + 10.0))
    if p.regime in ("yamabe", "small") and np.ptp(prof.xi) > 1e-10:
        raise DomainError("synthetic expansion around a periodic profile is not supported; use a constant")
    terms = cfg.terms if cfg.terms is not None else [[1.0, 0, 1, 0.3], [2.0, 0, 0, 0.05], [2.0, 1, 0, 0.02]]
    basis = build_basis(p.n, 4 if cfg.degree is None else cfg.degree)
    t = np.linspace(0.0, T, int(20 * T) + 1)
    fld = synthesize_field(prof, [tuple(x) for x in terms], t, basis)
    order = cfg.order if cfg.order is not None else 3
    window = tuple(cfg.window) if cfg.window else (1.0, min(12.0, T))
    powers = 1 if any(j > 0 for _, j, _, _ in terms) else None
    rep = extract_expansion(fld, prof, order, window=window, t_powers=powers)
    want = {(round(r, 9), j, i): c for r, j, i, c in terms}
    errors = []
    for term in rep.terms:
        key = (round(term.mu, 9), term.power, term.index)
        errors.append(abs(float(term.coefficient) - want.pop(key, 0.0)))
    return rep, fld, prof, {"synthesized": terms, "max_coefficient_error": max(errors, default=0.0),
                            "unrecovered": [list(k) for k in sorted(want)]}


def cmd_expand(cfg):
    from .expansion_engine import deviation, extract_expansion, improved_radial_match, order1_extract

    p = _params(cfg)
    extra = {}
    if cfg.source == "synthetic":
        rep, src, prof, extra = _expand_synthetic(cfg, p)
    else:
        src = _solve(cfg, p)
        prof = src.reference
        window = tuple(cfg.window) if cfg.window else None
        if p.regime == "large":
            match = improved_radial_match(src, window=window)
            prof = match.profile
            extra["match"] = match.to_dict()
            window = window or match.window
        extra["order1"] = order1_extract(src, prof, window=window).to_dict()
        rep = extract_expansion(src, prof, 2 if cfg.order is None else cfg.order, window=window,
                                cutoff=cfg.cutoff, check_stages=False)
        extra["certificate"] = src.certificate.to_dict()
    res = {"params": p.to_dict(), "source": cfg.source, "expansion": rep.to_dict(), **extra}
    rows = [(r["mu"], r["power"], r["index"], r["degree"], r["coefficient"], r["class"], r["significant"])
            for r in rep.term_rows()]
    lo, hi = rep.window
    if cfg.source == "synthetic":
        # a sampled field can only be read on its own grid
        t = src.t[(src.t >= lo) & (src.t <= hi)]
    else:
        t = np.linspace(lo, hi, 201)
    dev = deviation(src, prof, t)
    plot = [(ti, s) for ti, s in zip(t, dev.sup_theta())]
    table = (["mu", "t_power", "index", "degree", "coefficient", "class", "significant"], rows)
    return res, table, (["t", "sup_abs_deviation"], plot)


def cmd_verify(cfg):
    from . import acceptance

    acceptance.clear_caches()
    results = acceptance.run_all(cfg.seed, cfg.criteria)
    for r in results:
        print(f"{r.line()} [{r.seconds:.1f} s]", file=sys.stderr)
    res = {"criteria": [r.to_dict() for r in results], "passed": all(r.passed for r in results)}
    rows = [(r.number, c.name, c.value, c.relation, c.bound, c.passed, c.literal) for r in results for c in r.checks]
    plot = [(r.number, int(r.passed), len(r.literal_failures)) for r in results]
    table = (["criterion", "check", "value", "relation", "bound", "passed", "literal"], rows)
    return res, table, (["criterion", "passed", "literal_failures"], plot)


HANDLERS = {"radial": cmd_radial, "kernel": cmd_kernel, "indexset": cmd_indexset, "solve": cmd_solve,
            "expand": cmd_expand, "verify": cmd_verify}


# ---------------------------------------------------------------- entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="cylinder-asymptotics",
                                     description="Radial profiles, kernels, index sets and expansions on the cylinder.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON file with RunConfig keys")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--n", type=int)
        sp.add_argument("--k", type=int)
        sp.add_argument("--order", type=int)
        sp.add_argument("--cutoff", type=float)
        sp.add_argument("--T", type=float)
        sp.add_argument("--degree", type=int)
    return parser


def run(argv=None):
    """Parse, run one command and return the exit status."""
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k) for k in ("out", "seed", "n", "k", "order", "cutoff", "T", "degree")}
    out_dir = args.out
    try:
        cfg = load_config(args.command, args.config, overrides)
        out_dir = cfg.out
        results, table, plot = HANDLERS[cfg.command](cfg)
        emit(cfg, results, table, plot)
    except ArtifactError as exc:
        return _fail(exc.to_dict(), exc.exit_code, out_dir)
    except (FloatingPointError, np.linalg.LinAlgError, ZeroDivisionError, OverflowError) as exc:
        return _fail({"error": "numerical_failure", "type": type(exc).__name__, "message": str(exc)}, 3, out_dir)
    if cfg.command == "verify" and not results["passed"]:
        return 4
    return 0


def _fail(payload, code, out_dir):
    payload = dict(payload, exit_code=code)
    print(json.dumps(clean(payload), sort_keys=True), file=sys.stderr)
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_json(Path(out_dir) / "error.json", payload)
    return code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()

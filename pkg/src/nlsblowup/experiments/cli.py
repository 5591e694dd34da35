"""Command line entry point.

Exit status: 0 when every check held, 2 when a report carries findings,
1 on errors.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..core import derive_params
from ..errors import NLSError, NoBlowup
from ..inequalities import (DEFAULT_ETAS, TOL_AUDIT, GNConstants, audit, calibrate, corpus_grid, corpus_id,
                            make_corpus)
from ..profile import ProfileParams, ground_state, output_grid, shoot, sweep_b, tail_diagnostic
from ..trajectory import TrajectoryRecord
from .constants import load_constants
from .manifest import AnalysisSpec, apply_section, load_manifest, parse_overrides
from .scenarios import critical_series, scenario_blowup, scenario_channels, scenario_prop31, scenario_prop32

log = logging.getLogger("nlsblowup")

OK, ERROR, FINDINGS = 0, 1, 2
REPORTS = ("blowup", "prop31", "prop32", "channels", "audit", "profile")


def _default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, default=_default, sort_keys=True) + "\n")
    return path


def _status(rep: dict) -> int:
    return FINDINGS if rep.get("findings") else OK


def _read_ini(path, overrides) -> dict:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if not cp.read(path):
        raise FileNotFoundError(path)
    sec = {s: dict(cp[s]) for s in cp.sections()}
    for s, kv in parse_overrides(overrides).items():
        sec.setdefault(s, {}).update(kv)
    return sec


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    m = load_manifest(args.manifest, args.set)
    out = Path(args.out or m.output)
    try:
        rec, rep = scenario_blowup(m, out)
    except NoBlowup as exc:
        rep = exc.args[1] if len(exc.args) > 1 else {}
        rep["error"] = str(exc.args[0])
        write_json(rep, out / "blowup.json")
        raise
    write_json(rep, out / "blowup.json")
    log.info("%d samples, amplification %.4g, gamma_emp %.4f", rep["samples"], rep["amplification"],
             rep["gamma_emp"])
    return _status(rep)


def _analysis(args) -> AnalysisSpec:
    spec = AnalysisSpec()
    ov = parse_overrides(args.set)
    unknown = set(ov) - {"analysis"}
    if unknown:
        raise KeyError(f"only analysis.* overrides apply here, got {sorted(unknown)}")
    apply_section(spec, ov.get("analysis", {}), "analysis")
    if args.anchors is not None:
        spec.anchors = args.anchors
    if args.constants is not None:
        spec.constants = args.constants
    return spec


def _trajectory_command(name: str, args) -> int:
    spec = _analysis(args)
    rec = TrajectoryRecord.from_dir(args.trajectory)
    consts = load_constants(spec.constants or None)
    if name == "prop31":
        rep = scenario_prop31(rec, consts, spec.anchors, tuple(spec.A_ladder))
    elif name == "prop32":
        rep = scenario_prop32(rec, consts, spec.anchors, tuple(spec.thresholds))
    else:
        rep = scenario_channels(rec, consts, spec.anchors, args.rule or spec.channel_rule)
    out = Path(args.out or args.trajectory)
    write_json(rep, out / f"{name}.json")
    log.info("%s: %d anchors, %d findings", name, len(rep["anchors"]), len(rep["findings"]))
    return _status(rep)


def cmd_audit(args) -> int:
    """Corpus config: ``[corpus] N p seed n r_max M`` and ``[audit] constants tol calibrate_seed``."""
    sec = _read_ini(args.config, args.set)
    c = sec.get("corpus", {})
    a = sec.get("audit", {})
    P = derive_params(int(c.get("N", 3)), float(c.get("p", 3.0)))
    seed, n = int(c.get("seed", 2)), int(c.get("n", 500))
    grid = corpus_grid(float(c.get("r_max", 32.0)), int(c.get("M", 2049)))
    tol = float(a.get("tol", TOL_AUDIT))
    if a.get("calibrate_seed"):
        cs = int(a["calibrate_seed"])
        cal, desc = make_corpus(P, n, cs, grid)
        gn = calibrate(cal, DEFAULT_ETAS, corpus_id(P, cs, n), desc["manifest"])
        src = f"calibrated on {gn.corpus_id}"
    elif a.get("constants"):
        gn, src = _load_gn(a["constants"]), a["constants"]
    else:
        consts = load_constants()
        gn, src = consts.gn, consts.path
    if (gn.N, gn.p) != (P.N, P.p):
        raise ValueError(f"constants are for (N, p) = ({gn.N}, {gn.p}), corpus is ({P.N}, {P.p})")
    fields, _ = make_corpus(P, n, seed, grid)
    res = audit(gn, fields, tol_rel=tol)
    rep = {
        "scenario": "audit",
        "corpus": corpus_id(P, seed, n),
        "constants": src,
        "C_GN": gn.C_GN,
        "C_eta": {repr(float(k)): v for k, v in gn.C_eta.items()},
        "tol_rel": tol,
        "kinds": {k: asdict(v) | {"passed": v.passed} for k, v in res.items()},
        "findings": [f"{k}: {v.violations} violations beyond -{tol:g} margin" for k, v in res.items()
                     if not v.passed],
    }
    write_json(rep, Path(args.out or ".") / "audit.json")
    return _status(rep)


def _load_gn(path) -> GNConstants:
    """A full constants file or a bare GN constants file."""
    d = json.loads(Path(path).read_text())
    return GNConstants.from_json(json.dumps(d["gn"] if "gn" in d else d))


def cmd_profile(args) -> int:
    """Params file: ``[profile] N p b P0 y_max`` and optional ``b_sweep``."""
    sec = _read_ini(args.params, args.set).get("profile", {})
    N, p = int(sec.get("N", 3)), float(sec.get("p", 3.0))
    b = float(sec.get("b", 0.0))
    y_max = float(sec.get("y_max", 30.0))
    out = Path(args.out or ".")
    rep: dict = {"scenario": "profile", "N": N, "p": p, "b": b, "findings": []}
    if b == 0.0 and "P0" not in sec:
        gs = ground_state(N, p, r_max=y_max)
        fine = ground_state(N, p, r_max=y_max, rtol=1e-13, atol=1e-15, h_max=0.025)
        res = gs.pohozaev()
        rep |= {"P0": gs.P0, "P0_refined": fine.P0, "P0_shift": abs(fine.P0 - gs.P0),
                "bisection_iterations": gs.bracket.iterations, "integrals": gs.integrals,
                "pohozaev": res, "y_match": gs.y_match, "derivative_mismatch": gs.derivative_mismatch}
        worst = max(abs(v) for v in res.values())
        if worst > 1e-6:
            rep["findings"].append(f"Pohozaev residual {worst:.3g} above 1e-6")
        if rep["P0_shift"] > 1e-6:
            rep["findings"].append(f"P0 moved {rep['P0_shift']:.3g} under refinement")
        _write_profile_csv(out / "profile.csv", gs.field.grid.radii, gs.field.values.real)
    else:
        P0 = float(sec["P0"])
        pp = ProfileParams(b, P0, y_max, N, p)
        shot = shoot(pp, outs=output_grid(y_max))
        rep |= {"shot": shot.summary(), "tail": tail_diagnostic(shot).to_dict()}
        _write_profile_csv(out / "profile.csv", shot.y, shot.values)
    if "b_sweep" in sec:
        bs = [float(x) for x in sec["b_sweep"].replace(",", " ").split()]
        rep["sweep"] = sweep_b(bs, float(sec.get("P0", rep.get("P0", 1.0))), N, p)
    write_json(rep, out / "profile.json")
    return _status(rep)


def _write_profile_csv(path, y, values) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    v = np.asarray(values, complex)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "re", "im", "abs"])
        for row in zip(y, v.real, v.imag, np.abs(v)):
            w.writerow([repr(float(x)) for x in row])


# ---------------------------------------------------------------- report


def _csv(path: Path, header: list, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(["" if x is None else (repr(float(x)) if isinstance(x, float) else x) for x in r])
    return path


def report(run_dir) -> dict:
    """Aggregate the JSON reports found in ``run_dir`` into ``summary.json``
    and plot-ready CSV files."""
    run_dir = Path(run_dir)
    reps = {n: json.loads((run_dir / f"{n}.json").read_text()) for n in REPORTS
            if (run_dir / f"{n}.json").exists()}
    if not reps and not (run_dir / "manifest.json").exists():
        raise FileNotFoundError(f"no reports or trajectory in {run_dir}")
    out = run_dir / "report"
    out.mkdir(exist_ok=True)
    files = []
    if (run_dir / "manifest.json").exists():
        rec = TrajectoryRecord.from_dir(run_dir)
        cols = rec.series("t", "lam", "grad_sq", "energy", "mass", "lpc", upto="horizon")
        files.append(_csv(out / "trajectory.csv", ["t", "lam", "grad_sq", "energy", "mass", "lpc"],
                          zip(*(c.tolist() for c in cols))))
        if reps.get("blowup", {}).get("blowup"):
            cs = critical_series(rec)
            names = list(cs)
            files.append(_csv(out / "critical_norm.csv", names, zip(*(np.asarray(cs[k]).tolist() for k in names))))
    if "prop31" in reps:
        As = list(reps["prop31"]["anchors"][0]["rho"]) if reps["prop31"]["anchors"] else []
        rows = [[a["k"], a["t"], a["N_t"], a["M0"], a["tau_star"], a["dispersive_max"], a["alpha1"], a["alpha2"]]
                + [a["rho"][A]["max_over_M0sq"] for A in As] for a in reps["prop31"]["anchors"]]
        files.append(_csv(out / "prop31.csv", ["k", "t", "N_t", "M0", "tau_star", "dispersive_max", "alpha1",
                                               "alpha2"] + [f"rho_A{A}_over_M0sq" for A in As], rows))
    if "prop32" in reps:
        rows, ths = [], []
        for a in reps["prop32"]["anchors"]:
            for q in a["rows"]:
                ths = list(q["D"])
                rows.append([a["k"], q["tau0"], q["lam_v"], q["F_star"], q["energetic"]]
                            + [q["D"][t] for t in ths] + [q["D_ratio"][t] for t in ths])
        files.append(_csv(out / "prop32.csv", ["k", "tau0", "lam_v", "F_star", "energetic"]
                          + [f"D_{t}" for t in ths] + [f"D_ratio_{t}" for t in ths], rows))
    if "channels" in reps:
        rows = []
        for a in reps["channels"]["anchors"]:
            fam = set(a["lower_bound_cert"]["family"])
            chan = {c["i"]: c for c in a["channels"]}
            for ann in a["annuli"]:
                c = chan[ann["i"]]
                rows.append([a["k"], a["N_t"], a["M_t"], a["L_t"], c["i"], c["tau"], c["lam_v"], c["F"],
                             ann["r_in"], ann["r_out"], ann["mass"], int(ann["i"] in fam)])
        files.append(_csv(out / "channels.csv", ["k", "N_t", "M_t", "L_t", "i", "tau", "lam_v", "F", "r_in",
                                                 "r_out", "mass", "certified"], rows))
    summary = {
        "run_dir": str(run_dir),
        "reports": {n: {"findings": len(r.get("findings", [])), "first_findings": r.get("findings", [])[:5]}
                    for n, r in reps.items()},
        "csv": [f.name for f in files],
        "findings": [f"{n}: {x}" for n, r in reps.items() for x in r.get("findings", [])],
    }
    b = reps.get("blowup", {})
    for k in ("amplification", "alpha", "gamma_emp", "gamma_lower95", "growth", "gamma_in_bracket"):
        if k in b:
            summary.setdefault("blowup", {})[k] = b[k]
    for n in ("prop31", "prop32"):
        for k, v in reps.get(n, {}).items():
            if k.endswith("_emp"):
                summary.setdefault("empirical", {})[k] = v
    if "channels" in reps:
        summary["channels"] = {str(a["k"]): {"found": len(a["channels"]), "missing": len(a["missing"]),
                                             "certified": a["lower_bound_cert"]["count"],
                                             "predicted_count": a["lower_bound_cert"]["predicted_count"]}
                               for a in reps["channels"]["anchors"]}
    write_json(summary, out / "summary.json")
    return summary


def cmd_report(args) -> int:
    summary = report(args.run_dir)
    return FINDINGS if summary["findings"] else OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlsblowup", description="radial NLS blow-up experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_help="output directory"):
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a configuration entry (repeatable)")
        p.add_argument("--out", help=out_help)

    p = sub.add_parser("simulate", help="run a blow-up manifest and analyze it")
    p.add_argument("manifest")
    common(p, "record directory (default: the manifest's run.output)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("audit-inequalities", help="audit the GN inequalities on a fresh corpus")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_audit)

    blurbs = {"prop31": "dispersion and rho observables", "prop32": "weighted local mass and flux drift",
              "channels": "compactness channels"}
    for name in ("prop31", "prop32", "channels"):
        p = sub.add_parser(name, help=f"{blurbs[name]} on a recorded trajectory")
        p.add_argument("trajectory")
        p.add_argument("--anchors", help='"all", "last", or anchor orders k such as "20,25,30"')
        p.add_argument("--constants", help="constants file (default: the shipped one)")
        if name == "channels":
            p.add_argument("--rule", choices=("first", "proof"))
        common(p, "report directory (default: the trajectory directory)")
        p.set_defaults(func=lambda a, n=name: _trajectory_command(n, a))

    p = sub.add_parser("profile-shoot", help="shoot the ground state or a self-similar profile")
    p.add_argument("params")
    common(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("report", help="aggregate reports into summary.json and CSV")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        code = args.func(args)
    except (NLSError, OSError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, NLSError) and exc.args else exc
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return ERROR
    if code == FINDINGS:
        print("findings reported; see the JSON output", file=sys.stderr)
    return code


if __name__ == "__main__":
    raise SystemExit(main())

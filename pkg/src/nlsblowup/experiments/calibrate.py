"""One-off calibration of the shipped constants file.

Runs the GN corpus calibration, the headline manifest, and then fits the
empirical exponents in dependency order: alpha2 (dispersion) feeds L(t),
which feeds the channel search that fixes alpha4. Reference-run values used
by the regression tests are stored alongside.

    python -m nlsblowup.experiments.calibrate [--out constants.json] [--record DIR]
"""
from __future__ import annotations

import argparse
import math
import time

from ..inequalities import DEFAULT_ETAS, GNConstants, calibrate, corpus_id, make_corpus, refine_c_eta
from ..trajectory import TrajectoryRecord
from .constants import DEFAULT_FILE, Constants
from .manifest import load_manifest, packaged
from .scenarios import (alpha4_from_channels, analyze_blowup, scenario_blowup, scenario_channels,
                        scenario_prop31, scenario_prop32)

GN_SEED = 1
GN_SIZE = 500


def calibrate_gn(P, seed: int = GN_SEED, n: int = GN_SIZE) -> GNConstants:
    fields, desc = make_corpus(P, n, seed)
    c = calibrate(fields, DEFAULT_ETAS, corpus_id(P, seed, n), desc["manifest"])
    return refine_c_eta(c, fields, desc["members"])


def reference_values(rec: TrajectoryRecord, consts: Constants) -> dict:
    """Per-anchor regression values of the headline run under ``consts``."""
    blow = analyze_blowup(rec)
    p31 = scenario_prop31(rec, consts)
    p32 = scenario_prop32(rec, consts)
    ref = {
        "blowup": {k: blow[k] for k in ("amplification", "alpha", "gamma_emp", "lpc_final", "samples")},
        "prop31": {
            str(a["k"]): {
                "dispersive_max": a["dispersive_max"],
                "rho_max_over_M0sq": {A: d["max_over_M0sq"] for A, d in a["rho"].items()},
            }
            for a in p31["anchors"]
        },
        "prop32": {
            str(a["k"]): {"D_ratio_tau0_0": a["rows"][0]["D_ratio"]} for a in p32["anchors"]
        },
        "channels": {},
    }
    for rule in ("first", "proof"):
        ch = scenario_channels(rec, consts, rule=rule)
        ref["channels"][rule] = {
            str(a["k"]): {"found": len(a["channels"]), "certified": a["lower_bound_cert"]["count"]}
            for a in ch["anchors"]
        }
    return ref


def calibrate_all(rec: TrajectoryRecord, gn: GNConstants, manifest_digest: str = "") -> Constants:
    consts = Constants(gn=gn)
    p31 = scenario_prop31(rec, consts)
    consts.alpha1 = p31["alpha1_emp"]
    consts.alpha2 = p31["alpha2_emp"]
    p32 = scenario_prop32(rec, consts)
    consts.alpha3 = p32["alpha3_emp"][repr(consts.c3)]
    consts.alpha4 = alpha4_from_channels(rec, consts, consts.c3)
    consts.reference = reference_values(rec, consts)
    consts.provenance = {
        "manifest": "headline.ini",
        "manifest_digest": manifest_digest,
        "gn_corpus": gn.corpus_id,
        "alpha1": f"smallest a with rho(v, M0^a sqrt(tau)) <= C1 M0^2, C1 = {consts.C1:g}",
        "alpha2": "max over anchors of log(dispersive max)/log M0",
        "alpha3": f"max over anchors and tau0 of log(D/max(1, F*))/log M0 at threshold c3 = {consts.c3:g}",
        "alpha4": f"max over anchors and channels of log(D(tau_i))/log M at threshold c3 = {consts.c3:g}",
    }
    for k in ("alpha1", "alpha2", "alpha3", "alpha4"):
        if not math.isfinite(getattr(consts, k)):
            raise ValueError(f"{k} did not calibrate to a finite value")
    return consts


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="regenerate the shipped constants file")
    ap.add_argument("--out", default=str(DEFAULT_FILE))
    ap.add_argument("--record", help="reuse a saved headline record instead of re-running it")
    ap.add_argument("--save-record", help="directory to archive the fresh headline record")
    args = ap.parse_args(argv)
    t0 = time.perf_counter()
    m = load_manifest(packaged("headline.ini"))
    gn = calibrate_gn(m.params)
    print(f"GN constants: C_GN = {gn.C_GN:.6g}, C_eta = {gn.C_eta}  [{time.perf_counter() - t0:.0f}s]")
    if args.record:
        rec = TrajectoryRecord.from_dir(args.record)
    else:
        rec, _ = scenario_blowup(m, args.save_record)
    print(f"headline record: {len(rec)} samples  [{time.perf_counter() - t0:.0f}s]")
    consts = calibrate_all(rec, gn, m.digest())
    consts.to_json(args.out)
    print(f"alpha1..4 = {consts.alpha1:.4g} {consts.alpha2:.4g} {consts.alpha3:.4g} {consts.alpha4:.4g}")
    print(f"wrote {args.out}  [{time.perf_counter() - t0:.0f}s]")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

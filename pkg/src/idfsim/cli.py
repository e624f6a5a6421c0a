"""Command-line front end.

    idfsim SUBCOMMAND [--config PATH] [--seed S] [--workers N] [--out DIR]
                      [--trials N] [--no-figures] [KEY=VALUE ...]

Every run writes results.json (config echo, seed, summary), one or more
CSV tables and, unless disabled, PNG figures into the output directory.
Wall-clock times go to timing.json so the other files are reproducible
byte for byte.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import analysis
from .channel import ChannelParams, PowerConstraint, StateParams
from .config import dumps, load_config
from .crgen import QuantizerConfig, cr_round_outputs, quantize, uniformity_chi2
from .errors import CalibrationFailure, InvalidArgument
from .funcfam import FamilyConfig, collision_counts, sample_identities
from .gaussmath import RngStream
from .idf import IdfCode, IdfCodeConfig, run_pipeline
from .innercode import (InnerCodeConfig, build_codebook, calibrate, estimate_inner_error,
                        max_compliant_p_use)

log = logging.getLogger("idfsim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CALIBRATION = 3
EXIT_THRESHOLD = 4

# Keys that only steer execution; they are left out of the echoed config
# so that results do not depend on where or how wide a run was.
_RUN_ONLY = ("out", "workers")

# Top-level substream tags per experiment family.
_STREAM_CAL, _STREAM_SIM, _STREAM_CR, _STREAM_COLL = 10, 20, 30, 40


# ------------------------------------------------------------------ output


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


class Run:
    def __init__(self, command, cfg, out, figures=True):
        self.command = command
        self.cfg = cfg
        self.echo = {k: v for k, v in cfg.items() if k not in _RUN_ONLY}
        self.out = out
        self.figures = figures
        self.files = []
        self.figure_files = []
        self.t0 = time.perf_counter()
        self.timings = {}
        os.makedirs(out, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out, name)

    def write_csv(self, name, header, rows):
        """CSV with a leading '#' line holding the exact config."""
        with open(self.path(name), "w", newline="") as fh:
            fh.write("# config=" + json.dumps(self.echo, sort_keys=True) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(row.get(h)) for h in header])
        self.files.append(name)

    def figure(self, name, fn, *args):
        if not self.figures:
            return
        try:
            fn(*args, self.path(name))
            self.figure_files.append(name)
        except Exception as exc:  # a broken figure must not lose the results
            log.warning("figure %s failed: %s", name, exc)

    def mark(self, label):
        self.timings[label] = time.perf_counter() - self.t0

    def finish(self, summary, passed, code):
        doc = {"command": self.command, "config": self.echo, "seed": self.cfg["seed"],
               "summary": summary, "passed": passed, "exit_code": code,
               "files": sorted(self.files + ["results.json"])}
        with open(self.path("results.json"), "w") as fh:
            fh.write(dumps(_jsonable(doc)) + "\n")
        self.mark("total")
        with open(self.path("timing.json"), "w") as fh:
            fh.write(dumps({"command": self.command, "workers": self.cfg["workers"],
                            "out": self.out, "figures": self.figure_files,
                            "wall_seconds": self.timings}) + "\n")
        return code


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return obj


# ---------------------------------------------------------------- builders


def channel_of(cfg):
    c = cfg["channel"]
    return ChannelParams(int(c["K"]), float(c["sigma2"]))


def power_of(cfg):
    p = cfg["power"]
    return PowerConstraint(float(p["p_total"]), None if p["p_peak"] is None else float(p["p_peak"]))


def state_of(cfg):
    s = cfg["state"]
    if s is None:
        return None
    return StateParams(tuple(s["mu"]), tuple(tuple(r) for r in s["sigma"]))


def epsilon_targets(cfg):
    t = cfg["calibration"]["epsilon_target"]
    if t is None:
        return float(cfg["code"]["lam"]) / 4.0
    return t


def inner_skeleton(cfg, channel, state):
    code = cfg["code"]
    K = channel.K
    M = tuple(int(v) for v in code["M"])
    reps = code["reps"] if code["reps"] is not None else [1] * K
    offset = state.total_mean() if (state is not None and code["compensate_mean"]) else 0.0
    return InnerCodeConfig(K, M, tuple(int(r) for r in np.broadcast_to(reps, (K,))),
                           None if code["p_use"] is None else float(code["p_use"]),
                           channel.sigma2, code["bits_per_symbol"], offset)


def calibrated_inner(cfg, channel, power, state, rng):
    """CalibrationResult-like (config, estimates, history) for the run.

    Fixed reps are measured rather than searched.
    """
    skel = inner_skeleton(cfg, channel, state)
    cal = cfg["calibration"]
    if cfg["code"]["reps"] is None:
        return calibrate(epsilon_targets(cfg), skel, int(cal["trials"]), rng, power=power,
                         state=state, max_reps=int(cal["max_reps"]))
    from dataclasses import replace

    from .innercode import CalibrationResult

    if skel.p_use is None:
        skel = replace(skel, p_use=max_compliant_p_use(replace(skel, p_use=1.0), power))
    est = estimate_inner_error(build_codebook(skel), int(cal["trials"]), rng, state)
    hist = [{"reps": list(skel.reps), "p_use": skel.p_use, "p_hat": [e.p_hat for e in est],
             "ci_high": [e.ci_high for e in est]}]
    return CalibrationResult(skel, est, hist)


def build_code(cfg, channel, power, state, cal):
    code = cfg["code"]
    L = int(code["L"])
    fam = FamilyConfig(L, tuple(int(v) for v in code["M"]))
    return IdfCode(IdfCodeConfig(channel, power, L, fam, cal.config, float(code["lam"]),
                                 int(code["master_seed"]), state, cal.epsilon_upper))


# ------------------------------------------------------------- subcommands


def _identity_hex(i):
    return f"{int(i):032x}"


def _calibration_rows(history):
    rows = []
    for step, h in enumerate(history):
        for k, (p, c) in enumerate(zip(h["p_hat"], h["ci_high"])):
            rows.append({"step": step, "sender": k + 1, "reps": h["reps"][k],
                         "reps_vector": " ".join(map(str, h["reps"])), "p_use": h["p_use"],
                         "p_hat": p, "ci_high": c})
    return rows


_CAL_HEADER = ["step", "sender", "reps", "reps_vector", "p_use", "p_hat", "ci_high"]


def _calibration_summary(cal, targets, K):
    targets = list(np.broadcast_to(np.asarray(targets, dtype=float), (K,)))
    return {"reps": list(cal.config.reps), "p_use": cal.config.p_use, "n_inner": cal.config.n_inner,
            "m": cal.config.m, "offset": cal.config.offset, "targets": targets,
            "epsilon": [e.to_dict() for e in cal.estimates],
            "epsilon_upper": list(cal.epsilon_upper)}


def cmd_calibrate(run):
    cfg = run.cfg
    channel, power = channel_of(cfg), power_of(cfg)
    state = state_of(cfg) if cfg["calibration"]["with_state"] else None
    rng = RngStream(cfg["seed"]).substream(_STREAM_CAL)
    try:
        cal = calibrated_inner(cfg, channel, power, state, rng)
    except CalibrationFailure as exc:
        return run.finish({"error": str(exc), "best_epsilon": list(exc.best_epsilon),
                           "best_reps": None if exc.best_reps is None else list(exc.best_reps)},
                          False, EXIT_CALIBRATION)
    run.mark("calibration")
    targets = epsilon_targets(cfg)
    run.write_csv("calibration.csv", _CAL_HEADER, _calibration_rows(cal.history))
    from .innercode import codebook_to_csv

    codebook_to_csv(build_codebook(cal.config), run.path("codebook.csv"))
    run.files.append("codebook.csv")
    from .plotting import plot_calibration

    run.figure("calibration.png", plot_calibration, cal.history,
               list(np.broadcast_to(np.asarray(targets, dtype=float), (channel.K,))))
    return run.finish(_calibration_summary(cal, targets, channel.K), True, EXIT_OK)


def _simulate(run, with_state):
    cfg = run.cfg
    channel, power = channel_of(cfg), power_of(cfg)
    state = state_of(cfg) if with_state else None
    if with_state and state is None:
        raise InvalidArgument("sd-simulate needs a state law in the config")
    root = RngStream(cfg["seed"])
    try:
        cal = calibrated_inner(cfg, channel, power, state, root.substream(_STREAM_CAL))
    except CalibrationFailure as exc:
        return run.finish({"error": str(exc), "best_epsilon": list(exc.best_epsilon),
                           "best_reps": None if exc.best_reps is None else list(exc.best_reps)},
                          False, EXIT_CALIBRATION)
    run.mark("calibration")
    code = build_code(cfg, channel, power, state, cal)
    t1c, t2c = cfg["type1"], cfg["type2"]
    res = run_pipeline(code, int(t1c["identities"]), int(t1c["trials"]), int(t2c["pairs"]),
                       int(t2c["trials"]), root.substream(_STREAM_SIM),
                       t2c["distinguished_sender"], int(cfg["workers"]))
    run.mark("pipeline")
    lam = code.config.lam

    t1_rows = []
    for r in res.type1.rows:
        e = r["estimate"]
        t1_rows.append({"index": r["index"],
                        "identities": " ".join(_identity_hex(i) for i in r["identities"]),
                        "estimate": e.p_hat, "ci_low": e.ci_low, "ci_high": e.ci_high,
                        "events": e.events, "trials": e.trials,
                        "per_sender_events": " ".join(map(str, r["per_sender_events"]))})
    run.write_csv("type1.csv", ["index", "identities", "estimate", "ci_low", "ci_high", "events",
                                "trials", "per_sender_events"], t1_rows)
    t2_rows = []
    for r in res.type2.rows:
        e = r["estimate"]
        t2_rows.append({"index": r["index"], "sender": r["sender"],
                        "transmitted": _identity_hex(r["identities"][r["sender"] - 1]),
                        "alternative": _identity_hex(r["alternative"]),
                        "estimate": e.p_hat, "ci_low": e.ci_low, "ci_high": e.ci_high,
                        "events": e.events, "trials": e.trials,
                        "collision_count": r["collision_count"],
                        "collision_fraction": r["collision_fraction"], "ceiling": r["ceiling"],
                        "within_ceiling": e.ci_low <= r["ceiling"],
                        "not_above_lambda": e.ci_low <= lam})
    run.write_csv("type2.csv", ["index", "sender", "transmitted", "alternative", "estimate",
                                "ci_low", "ci_high", "events", "trials", "collision_count",
                                "collision_fraction", "ceiling", "within_ceiling",
                                "not_above_lambda"], t2_rows)
    run.write_csv("calibration.csv", _CAL_HEADER, _calibration_rows(cal.history))

    from .plotting import plot_type1, plot_type2

    run.figure("type1.png", plot_type1, res.type1.rows, lam)
    run.figure("type2.png", plot_type2, res.type2.rows, lam)

    s2 = res.type2.summary
    violations = res.type1.power_violations + res.type2.power_violations
    checks = {
        "type1_upper_le_lambda": res.type1.aggregate.ci_high <= lam,
        "type2_within_ceiling": s2.get("ceiling_violations", 0) == 0,
        "type2_99pct_not_above_lambda": s2.get("fraction_significantly_above_lambda", 0.0) <= 0.01,
        "zero_power_violations": violations == 0,
    }
    summary = {
        "mode": "sd-gmac" if with_state else "gmac",
        "m": code.m, "quantizer": {"L": code.quantizer.L, "mu_y": code.quantizer.mu_y,
                                   "sigma_y": code.quantizer.sigma_y},
        "calibration": _calibration_summary(cal, epsilon_targets(cfg), channel.K),
        "feasibility": res.flags,
        "type1": {"aggregate": res.type1.aggregate.to_dict(),
                  "per_sender": [e.to_dict() for e in res.type1.per_sender],
                  "worst": res.type1.worst.to_dict()},
        "type2": s2,
        "power": {"violations": violations,
                  "codewords_checked": res.type1.codewords_checked + res.type2.codewords_checked},
        "checks": checks,
    }
    ok = all(checks.values())
    return run.finish(summary, ok, EXIT_OK if ok else EXIT_THRESHOLD)


def cmd_simulate(run):
    return _simulate(run, False)


def cmd_sd_simulate(run):
    return _simulate(run, True)


def cmd_cr_check(run):
    cfg = run.cfg
    cc = cfg["cr_check"]
    channel = channel_of(cfg)
    cases = [("gmac", None)]
    if cc["with_state"] and cfg["state"] is not None:
        cases.append(("sd-gmac", state_of(cfg)))
    root = RngStream(cfg["seed"]).substream(_STREAM_CR)
    samples = int(cc["samples"])
    Ls = [int(L) for L in cc["L"]]
    rows = []
    shown = {}
    for c, (name, state) in enumerate(cases):
        y = cr_round_outputs(channel, root.substream(c), samples, state)
        for L in Ls:
            q = QuantizerConfig.for_channel(L, channel, state)
            if cc["sigma_y_scale"] != 1.0:
                q = QuantizerConfig(L, q.mu_y, q.sigma_y * float(cc["sigma_y_scale"]))
            sym = quantize(y, q)
            rep = uniformity_chi2(sym, L, float(cc["alpha"]))
            rows.append({"case": name, "L": L, "samples": samples, "mu_y": q.mu_y,
                         "sigma_y": q.sigma_y, "chi2": rep.chi2, "critical": rep.critical,
                         "p_value": rep.p_value, "passed": rep.passed})
            if Ls and L == max(Ls):
                shown[name] = sym
    run.write_csv("cr_check.csv", ["case", "L", "samples", "mu_y", "sigma_y", "chi2", "critical",
                                   "p_value", "passed"], rows)
    if shown:
        from .plotting import plot_cr_frequencies

        run.figure("cr_check.png", plot_cr_frequencies, shown, max(Ls))
    ok = all(r["passed"] for r in rows)
    return run.finish({"rows": rows, "all_passed": ok}, ok, EXIT_OK if ok else EXIT_THRESHOLD)


def cmd_bounds(run):
    b = run.cfg["bounds"]
    rows = [analysis.bounds_row(int(L), float(lam), int(M))
            for L in b["L"] for lam in b["lam"] for M in b["M"]]
    header = ["L", "lambda", "M", "valid", "log2_exact_tail", "log2_chernoff", "log2_corollary",
              "corollary_vacuous", "log2_N_max", "feasible", "ordering_holds"]
    run.write_csv("bounds.csv", header, rows)
    from .plotting import plot_bounds

    run.figure("bounds.png", plot_bounds, rows)
    valid = [r for r in rows if r["valid"]]
    summary = {"points": len(rows), "valid_points": len(valid),
               "ordering_holds_everywhere": all(r["ordering_holds"] for r in valid),
               "vacuous_points": sum(bool(r["corollary_vacuous"]) for r in valid)}
    return run.finish(summary, True, EXIT_OK)


def _rate_row(source, log2_N, n, kind, extra=None):
    row = {"source": source, "log2_N": float(log2_N), "n": int(n),
           "kind": analysis.ScalingKind.parse(kind).value, "rate": None, "error": None}
    row.update(extra or {})
    try:
        row["rate"] = analysis.rate_under_scaling(float(log2_N), int(n), kind)
    except InvalidArgument as exc:
        row["error"] = str(exc)
    return row


def cmd_rates(run):
    r = run.cfg["rates"]
    rows = []
    for n in r["n"]:
        for kind in r["kinds"]:
            for v in r["log2_N"]:
                rows.append(_rate_row("grid", v, n, kind))
            for L in r["L"]:
                ids = analysis.max_identities_log2(int(L), float(r["lam"]), int(r["M"]))
                rows.append(_rate_row("max_identities", ids.log2_N, n, kind,
                                      {"L": int(L), "lambda": float(r["lam"]), "M": int(r["M"]),
                                       "feasible": ids.feasible}))
    header = ["source", "L", "lambda", "M", "feasible", "log2_N", "n", "kind", "rate", "error"]
    run.write_csv("rates.csv", header, rows)
    from .plotting import plot_rates

    run.figure("rates.png", plot_rates, rows)
    best = {}
    for row in rows:
        if row["rate"] is not None:
            best[row["kind"]] = max(best.get(row["kind"], -math.inf), row["rate"])
    return run.finish({"rows": len(rows), "max_rate": best}, True, EXIT_OK)


def cmd_collisions(run):
    cfg = run.cfg
    c = cfg["collisions"]
    root = RngStream(cfg["seed"]).substream(_STREAM_COLL)
    seed = int(cfg["code"]["master_seed"])

    # Concentration of the collision fraction around 1/M.
    L, M, pairs = int(c["L"]), int(c["M"]), int(c["pairs"])
    fam = FamilyConfig(L, (M,))
    sub = root.substream(0)
    a, b = sample_identities(sub, pairs), sample_identities(sub, pairs)
    counts = collision_counts(seed, 1, a, b, fam)
    frac = counts / L
    p = 1.0 / M
    band = 3.0 * math.sqrt(p * (1 - p) / (L * pairs))
    pair_band = 4.0 * math.sqrt(p * (1 - p) / L)
    conc = {"L": L, "M": M, "pairs": pairs, "mean_fraction": float(frac.mean()),
            "expected": p, "band": band, "mean_within_band": abs(frac.mean() - p) <= band,
            "fraction_pairs_within_4se": float(np.mean(np.abs(frac - p) <= pair_band))}

    # Tail of the collision fraction in the regime with a positive exponent.
    tL, tM, tlam, tp = int(c["tail_L"]), int(c["tail_M"]), float(c["tail_lam"]), int(c["tail_pairs"])
    sub = root.substream(1)
    ta, tb = sample_identities(sub, tp), sample_identities(sub, tp)
    tcounts = collision_counts(seed, 1, ta, tb, FamilyConfig(tL, (tM,)))
    exceed = int(np.count_nonzero(tcounts >= analysis.tail_threshold(tL, tlam)))
    ch = 2.0 ** analysis.chernoff_log2_bound(tL, tlam, 1.0 / tM)
    cor = analysis.corollary_log2_bound(tL, tlam, tM)
    from .stats import ErrorEstimate

    tail_est = ErrorEstimate.from_counts(exceed, tp)
    tail_ok = exceed == 0 if ch < 1.0 / tp else tail_est.ci_low <= ch
    tail = {"L": tL, "M": tM, "lambda": tlam, "pairs": tp, "exceedances": exceed,
            "chernoff_bound": ch, "log2_corollary": cor.log2_bound,
            "corollary_vacuous": cor.vacuous, "max_fraction": float(tcounts.max() / tL),
            "passed": bool(tail_ok)}

    # Psi-variable tail against the exact binomial tail.
    ps = c["psi"]
    res = analysis.empirical_psi_tail(int(ps["L"]), float(ps["lam"]), int(ps["M"]),
                                      int(ps["pair_trials"]), root.substream(2),
                                      source=ps["source"], master_seed=seed)
    from fractions import Fraction

    exact = float(analysis.exact_binomial_tail(int(ps["L"]), Fraction(1, int(ps["M"])),
                                               float(ps["lam"])))
    se = math.sqrt(exact * (1 - exact) / res.estimate.trials)
    psi = {"L": res.L, "M": res.M, "lambda": res.lam, "pair_trials": res.estimate.trials,
           "frequency": res.estimate.p_hat, "ci_low": res.estimate.ci_low,
           "ci_high": res.estimate.ci_high, "exact_tail": exact, "standard_error": se,
           "chernoff_bound": res.chernoff_bound, "corollary_bound": res.corollary_bound,
           "corollary_vacuous": res.corollary_vacuous,
           "within_3se_of_exact": abs(res.estimate.p_hat - exact) <= 3 * se,
           "below_chernoff": res.estimate.p_hat <= res.chernoff_bound}

    run.write_csv("collisions.csv", ["pair", "identity_a", "identity_b", "collision_count",
                                     "collision_fraction"],
                  [{"pair": i, "identity_a": _identity_hex(a[i]), "identity_b": _identity_hex(b[i]),
                    "collision_count": int(counts[i]), "collision_fraction": float(frac[i])}
                   for i in range(pairs)])
    from .plotting import plot_collisions

    run.figure("collisions.png", plot_collisions, frac, M)
    checks = {"mean_within_band": bool(conc["mean_within_band"]), "tail": tail["passed"],
              "psi_within_3se": bool(psi["within_3se_of_exact"]),
              "psi_below_chernoff": bool(psi["below_chernoff"])}
    ok = all(checks.values())
    return run.finish({"concentration": conc, "tail": tail, "psi": psi, "checks": checks}, ok,
                      EXIT_OK if ok else EXIT_THRESHOLD)


COMMANDS = {
    "cr-check": cmd_cr_check,
    "simulate": cmd_simulate,
    "sd-simulate": cmd_sd_simulate,
    "bounds": cmd_bounds,
    "rates": cmd_rates,
    "collisions": cmd_collisions,
    "calibrate": cmd_calibrate,
}

# Which config entry --trials sets for each subcommand.
_TRIALS_KEYS = {
    "cr-check": [("cr_check", "samples")],
    "simulate": [("type1", "trials"), ("type2", "trials")],
    "sd-simulate": [("type1", "trials"), ("type2", "trials")],
    "calibrate": [("calibration", "trials")],
    "collisions": [("collisions", "psi", "pair_trials")],
}


def build_parser():
    parser = argparse.ArgumentParser(prog="idfsim", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (a results.json also works)")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--out", help="output directory")
        p.add_argument("--trials", type=int, help="main trial count of the subcommand")
        p.add_argument("--no-figures", action="store_true", help="skip PNG figures")
        p.add_argument("overrides", nargs="*", metavar="KEY=VALUE",
                       help="dotted-path config overrides, e.g. code.L=1024")
    return parser


def resolve_config(args):
    cfg = load_config(args.config, args.overrides)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.out is not None:
        cfg["out"] = args.out
    if args.trials is not None:
        for path in _TRIALS_KEYS.get(args.command, []):
            node = cfg
            for k in path[:-1]:
                node = node[k]
            node[path[-1]] = args.trials
    if not 0 <= int(cfg["seed"]) < 1 << 64:
        raise InvalidArgument("seed must be an unsigned 64-bit integer")
    if int(cfg["workers"]) < 1:
        raise InvalidArgument("workers must be positive")
    return cfg


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        run = Run(args.command, copy.deepcopy(cfg), cfg["out"], not args.no_figures)
        code = COMMANDS[args.command](run)
    except (InvalidArgument, KeyError, TypeError, ValueError) as exc:
        print(f"idfsim {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("%s finished with exit code %d; results in %s", args.command, code, cfg["out"])
    return code


if __name__ == "__main__":
    sys.exit(main())

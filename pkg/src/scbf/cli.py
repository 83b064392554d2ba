"""Command line entry point ``scbf``.

Every run writes ``manifest.json`` (resolved configuration, seed, version)
into the output directory, followed by the command's CSV and JSON outputs
and a ``verdict.json``.  The exit status is 0 exactly when every asserted
check passed.  Errors produce ``failure.json`` and a nonzero status:

* 1: a check failed
* 2: invalid configuration (schema, malformed JSON, bad values)
* 3: inadmissible parameters (the violated condition is named)
* 4: numerical failure (blow-up, non-convergence)
* 5: unexpected internal error
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .config import COMMANDS, SchemaError, manifest, parse_config
from .errors import AdmissibilityError, ConfigurationError, SCBFError
from .integrator import bernoulli_amplitude, resolve_threads, run_ensemble

log = logging.getLogger("scbf")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ADMISSIBILITY, EXIT_NUMERIC, EXIT_INTERNAL = range(6)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    return obj


def write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x
                        for x in row])


# --------------------------------------------------------------------------
# commands; each returns (passed, summary dict)
# --------------------------------------------------------------------------

def cmd_simulate(R, out: Path, threads: int):
    ex = R.experiment
    cfg = R.simulation()
    u0 = R.field(ex["initial"])
    res = run_ensemble(cfg, u0, paths=R.paths, threads=threads)
    for i in range(res.paths):
        tr = res.trajectory(i)
        tr.write_csv(out / f"trajectory_{i:04d}.csv")
        if cfg.noise is not None:
            tr.write_jump_log(out / f"jumps_{i:04d}.csv")
    ledgers = [res.ledger(i).to_dict() for i in range(res.paths)]
    keys = list(ledgers[0])
    write_rows(out / "ledger.csv", ["path"] + keys, [[i] + [lg[k] for k in keys]
                                                    for i, lg in enumerate(ledgers)])
    blow = int(res.blown_up.sum())
    summary = {"paths": res.paths, "blowups": blow,
               "max_relative_residual": float(np.nanmax(np.abs(res.residuals())
                                                        / res.initial_energy))
               if np.all(res.initial_energy > 0) else None}
    passed = blow == 0
    if ex["ledger_tol"] is not None:
        rel = np.abs(res.residuals()) / np.maximum(res.initial_energy, 1e-300)
        ok = bool(np.all(rel <= ex["ledger_tol"]))
        summary["ledger_passed"] = ok
        passed = passed and ok
    if ex["oracle"] == "bernoulli":
        if ex["initial"]["type"] != "beltrami" or cfg.noise is not None or \
                np.any(cfg.forcing.coeffs != 0):
            raise ConfigurationError("the Bernoulli oracle needs Beltrami initial data, "
                                     "no noise and no forcing")
        vol = R.domain.volume
        a0 = float(res.norm_H[0, 0]) / np.sqrt(vol)
        exact = np.sqrt(vol) * bernoulli_amplitude(a0, R.params.mu, R.params.beta,
                                                   R.params.r, res.times)
        rel = np.abs(res.norm_H[0] - exact) / exact
        write_rows(out / "oracle.csv", ["t", "norm_H", "exact", "rel_err"],
                   zip(res.times, res.norm_H[0], exact, rel))
        summary["oracle_max_rel_err"] = float(rel.max())
        summary["oracle_passed"] = bool(rel.max() <= ex["tol"])
        passed = passed and summary["oracle_passed"]
    return passed, summary


def cmd_verify_operators(R, out: Path, threads: int):
    from .operators import identity_fuzz, monotonicity_fuzz
    ex = R.experiment
    ids = identity_fuzz(R.domain, ex["cases"], R.seed, tuple(ex["r_values"]))
    mono = monotonicity_fuzz(R.domain, R.params, ex["cases"], R.seed)
    write_json(out / "operators.json", {"identities": ids, "monotonicity": mono})
    summary = {"cases": ex["cases"],
               "identities_passed": sum(r["passed"] for r in ids),
               "monotonicity_passed": sum(r["passed"] for r in mono),
               "max_b_ratio": max(r["b_ratio"] for r in ids),
               "max_c_rel": max(max(r["c_rel"].values()) for r in ids),
               "max_a_rel": max(r["a_rel"] for r in ids),
               "min_monotonicity_gap": min(r["gap"] for r in mono)}
    passed = all(r["passed"] for r in ids) and all(r["passed"] for r in mono)
    return passed, summary


def cmd_stationary(R, out: Path, threads: int):
    from .spectral import save_field
    from .stationary import deterministic_decay_experiment, solve_stationary, uniqueness_probe
    ex = R.experiment
    st = solve_stationary(R.params, R.forcing, tol=ex["solve_tol"], refine=ex["refine"])
    save_field(st.u_inf, out / "u_inf.json")
    probe = uniqueness_probe(R.params, R.forcing, ex["n_inits"], R.seed, tol=ex["solve_tol"])
    t = R.config["time"]
    dec = deterministic_decay_experiment(R.params, R.forcing, R.field(ex["initial"]),
                                         float(t["T"]), float(t["dt"]), tol=ex["decay_tol"],
                                         u_inf=st, record_every=int(t["record_every"]))
    write_rows(out / "decay.csv", ["t", "distance_sq", "envelope"],
               zip(dec.times, dec.distance_sq, dec.envelope))
    summary = {"solve": st.record(), "uniqueness_distance": probe.max_distance,
               "uniqueness_converged": probe.all_converged, "kappa": dec.kappa,
               "decay_slope": dec.slope, "decay_passed": dec.passed,
               "offending_time": dec.offending_time}
    passed = st.converged and probe.all_converged and probe.max_distance <= 1e-8 and dec.passed
    return passed, summary


def _stationary_target(R):
    """u_inf: the stabilizing anchor if there is one, else the solved stationary state."""
    from .stationary import stationary_residual
    nz = R.noise
    if nz is not None and nz.family == "stabilizing":
        res = stationary_residual(nz.anchor, R.params, R.forcing)
        if res > 1e-8:
            raise ConfigurationError(f"noise.anchor is not a stationary state of the configured "
                                     f"system (residual {res:.3g}); use {{\"type\": \"stationary\"}}")
        return nz.anchor
    return R.stationary_state()


def cmd_stability(R, out: Path, threads: int):
    from . import stability as st
    ex = R.experiment
    cfg = R.simulation()
    u0 = R.field(ex["initial"])
    kind = ex["kind"]
    summary = {"kind": kind, "constants": st.stability_constants(R.params, cfg.noise).to_dict()}
    if kind == "meansquare":
        rep = st.meansquare_decay_experiment(cfg, u0, _stationary_target(R), R.paths,
                                             tol=ex["tol"], threads=threads)
    elif kind == "coupling":
        rep = st.coupling_decay_experiment(cfg, u0, R.field(ex["initial_v"]), R.paths,
                                           tol=ex["tol"], threads=threads)
    elif kind == "pathwise":
        pw = st.pathwise_decay_experiment(cfg, u0, _stationary_target(R), R.paths, ex["h"],
                                          ex["eps"], ex["fraction"], threads=threads)
        write_rows(out / "n0.csv", ["path", "n0"], enumerate(pw.n0.tolist()))
        n = np.arange(pw.n_windows)
        write_rows(out / "windows.csv", ["n", "t", "bound", "median_sup", "max_sup"],
                   zip(n, n * pw.window, pw.bound, np.median(pw.window_sup, axis=0),
                       np.max(pw.window_sup, axis=0)))
        summary.update(pw.verdict())
        return pw.passed, summary
    else:
        raise ConfigurationError(f"stability kind {kind!r} is not one of meansquare, "
                                 "pathwise, coupling")
    rep.write_csv(out / "decay.csv")
    summary.update(rep.verdict())
    return rep.passed, summary


def cmd_stabilize(R, out: Path, threads: int):
    from .stability import stabilization_experiment
    ex = R.experiment
    cfg = R.simulation()
    rep = stabilization_experiment(cfg, R.field(ex["initial"]), _stationary_target(R), R.paths,
                                   slack=ex["slack"], required_fraction=ex["fraction"],
                                   threads=threads)
    write_rows(out / "slopes.csv", ["path", "limsup_slope", "martingale_short",
                                    "martingale_long"],
               zip(range(len(rep.limsup_slopes)), rep.limsup_slopes, rep.martingale_short,
                   rep.martingale_long))
    return rep.passed, rep.verdict()


def cmd_ergodicity(R, out: Path, threads: int):
    from . import ergodicity as er
    ex = R.experiment
    cfg = R.simulation()
    kind = ex["kind"]
    if kind == "time_average":
        rep = er.time_average_experiment(cfg, R.field(ex["initial"]), ex["observables"],
                                         burn_in=ex["burn_in"], tol=ex["tol"])
        for s in rep.series:
            safe = "".join(ch if ch.isalnum() or ch in "_-" else "_" for ch in s.observable)
            s.write_csv(out / f"series_{safe.strip('_')}.csv")
        return rep.passed, rep.verdict()
    if kind == "tightness":
        rep = er.tightness_diagnostic(cfg, R.field(ex["initial"]), R.paths, threads=threads)
        return rep.passed, rep.verdict()
    if kind == "cross_check":
        specs = ex.get("initial_list") or [{"type": "zero"}, ex["initial"]]
        rep = er.ergodicity_cross_check(cfg, [R.field(s) for s in specs], ex["observables"][0],
                                        paths=R.paths, burn_in=ex["burn_in"], tol=ex["tol"],
                                        threads=threads)
        rows = [(g, i, float(v)) for g, per in enumerate(rep.per_path) for i, v in enumerate(per)]
        write_rows(out / "time_averages.csv", ["initial", "path", "time_average"], rows)
        return rep.passed, rep.verdict()
    if kind == "mixing":
        rep = er.mixing_rate_experiment(cfg, R.field(ex["initial"]), R.field(ex["initial_v"]),
                                        R.paths, cap=ex["cap"], threads=threads)
        rep.write_csv(out / "mixing.csv")
        return rep.passed, rep.verdict()
    raise ConfigurationError(f"ergodicity kind {kind!r} is not one of time_average, "
                             "tightness, cross_check, mixing")


def cmd_isometry(R, out: Path, threads: int):
    from .noise import ito_isometry_estimate
    if R.noise is None:
        raise ConfigurationError("the isometry check needs a noise model")
    est = ito_isometry_estimate(R.noise, R.field(R.experiment["initial"]),
                                float(R.config["time"]["T"]), R.paths, R.seed)
    summary = {"mc_mean": est.mc_mean, "analytic": est.analytic, "stderr": est.stderr,
               "z_score": est.z_score, "z_max": R.experiment["z_max"]}
    return bool(est.z_score <= R.experiment["z_max"]), summary


HANDLERS = {
    "simulate": cmd_simulate,
    "verify-operators": cmd_verify_operators,
    "stationary": cmd_stationary,
    "stability": cmd_stability,
    "stabilize": cmd_stabilize,
    "ergodicity": cmd_ergodicity,
    "isometry": cmd_isometry,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="scbf",
        description="Pseudospectral simulator and verification lab for stochastic "
                    "convective Brinkman-Forchheimer equations with jump noise.")
    ap.add_argument("command_pos", nargs="?", choices=COMMANDS, metavar="COMMAND",
                    help="one of: " + ", ".join(COMMANDS))
    ap.add_argument("--command", choices=COMMANDS, help="same as the positional COMMAND")
    ap.add_argument("--config", required=True, help="JSON configuration or manifest")
    ap.add_argument("--out", default="scbf_out", help="output directory (default: scbf_out)")
    ap.add_argument("--seed", type=int, help="override ensemble.seed")
    ap.add_argument("--threads", type=int,
                    help="worker threads (default: $SCBF_THREADS or 1); never changes outputs")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(command, config, out, seed=None, threads=None) -> int:
    """Run one experiment and return its exit status."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        R = parse_config(config, command, seed)
        nthreads = resolve_threads(threads)
        write_json(out / "manifest.json", manifest(R.config, __version__, {"threads": nthreads}))
        log.info("running %s with seed %d", R.command, R.seed)
        passed, summary = HANDLERS[R.command](R, out, nthreads)
        write_json(out / "verdict.json", {"command": R.command, "passed": bool(passed),
                                          "summary": summary})
        print(f"{R.command}: {'PASS' if passed else 'FAIL'}")
        return EXIT_OK if passed else EXIT_FAIL
    except SchemaError as exc:
        code, info = EXIT_CONFIG, {"line": exc.line, "column": exc.column, "path": exc.path}
        err = exc
    except AdmissibilityError as exc:
        code, info = EXIT_ADMISSIBILITY, {"condition": exc.condition}
        err = exc
    except ConfigurationError as exc:
        code, info = EXIT_CONFIG, {}
        err = exc
    except SCBFError as exc:
        code, info = EXIT_NUMERIC, {}
        err = exc
    except Exception as exc:  # report anything else as machine-readable failure too
        code, info = EXIT_INTERNAL, {"traceback": traceback.format_exc()}
        err = exc
    failure = {"status": "error", "exit_code": code, "error": type(err).__name__,
               "message": str(err)}
    failure.update(info)
    write_json(out / "failure.json", failure)
    print(f"error: {err}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command and args.command_pos and args.command != args.command_pos:
        print("error: conflicting commands", file=sys.stderr)
        return EXIT_CONFIG
    command = args.command or args.command_pos
    return run(command, args.config, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``msqcd {simulate,calibrate,detect,streak}``.

Exit codes: 0 success (including a "no alarm" decision), 1 runtime fault,
2 invalid configuration or input.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import config as cfgmod
from . import sim, streak2d
from .config import ConfigError
from .detector import (DetectorConfig, _KernelRunner, calibrate_threshold_mc, load_calibration, null_max_sample,
                       replicate_rng, save_calibration, threshold_lemma1, threshold_record)
from .model import GaussianMeanShiftModel, PowerLawProfile
from .priors import ChangePointPrior, ParameterMixing, PatternPrior

log = logging.getLogger("msqcd")

TAG_STREAK_CALIBRATION = 2
TAG_STREAK_SYNTHETIC = 3
SIDECAR = "calibration.json"


class InputError(ValueError):
    """Malformed data file or data inconsistent with the configuration."""


# --- config -> objects ------------------------------------------------------------------

def detector_config(cfg: dict) -> DetectorConfig:
    m, pr, d = cfg["model"], cfg["priors"], cfg["detector"]
    model = GaussianMeanShiftModel(PowerLawProfile(m["C"], m["gamma"]), m["sigma"], rho=m["ar"] or None,
                                   n_streams=m["n_streams"], anchor=m["anchor"])
    pattern = PatternPrior.uniform(m["n_streams"], pr["q"] / (1.0 - pr["q"]), pr["K"])
    mixing = ParameterMixing.degenerate(d["theta"]) if d["statistic"] == "R_ptheta" \
        else ParameterMixing.uniform_grid(*d["grid"])
    return DetectorConfig(model, pattern, mixing, ChangePointPrior.geometric(pr["rho"], pr["pi_minus1"]),
                          d["head_start"], d["window"])


def experiment_config(cfg: dict) -> sim.ExperimentConfig:
    m, pr, d, e = cfg["model"], cfg["priors"], cfg["detector"], cfg["experiment"]
    return sim.ExperimentConfig(
        n_streams=m["n_streams"], profile_C=m["C"], profile_gamma=m["gamma"], sigma=m["sigma"], ar=tuple(m["ar"]),
        anchor=e["anchor"], rho=pr["rho"], pi_minus1=pr["pi_minus1"], q=pr["q"], K=pr["K"],
        m_values=tuple(e["m_values"]), theta=d["theta"], grid=tuple(d["grid"]), pfa_levels=tuple(e["pfa_levels"]),
        budget=e["budget"], calibration_budget=e["calibration_budget"], seed=cfg["seed"],
        detectors=tuple(e["detectors"]), threshold_method=e["threshold_method"], head_start=d["head_start"],
        window=e["window"], post_horizon=e["post_horizon"], workers=e["workers"])


def scan_config(cfg: dict) -> streak2d.ScanConfig:
    s = cfg["streak"]
    return streak2d.ScanConfig(s["n_angles"], s["max_angle_deg"], s["half_width"], s["center_x"], s["L"], s["K"],
                               s["w_psf"])


# --- data ingestion ---------------------------------------------------------------------

def read_multistream_csv(path, n_streams: int | None = None):
    """Parse ``t,stream_1,...,stream_N``; returns ``(labels, X)`` with ``X`` of shape ``(N, n)``."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError("empty CSV")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "t" or len(header) < 2:
        raise InputError("header must be 't,stream_1,...,stream_N'")
    N = len(header) - 1
    if n_streams is not None and N != n_streams:
        raise InputError(f"CSV has {N} streams but the config declares {n_streams}")
    labels, values = [], []
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != N + 1:
            raise InputError(f"row {r}: expected {N + 1} columns, found {len(row)}")
        vals = []
        for c, v in enumerate(row[1:], start=2):
            try:
                x = float(v)
            except ValueError:
                raise InputError(f"row {r}, column {c}: not a number ({v!r})") from None
            if not math.isfinite(x):
                raise InputError(f"row {r}, column {c}: non-finite value")
            vals.append(x)
        labels.append(row[0].strip())
        values.append(vals)
    if not values:
        raise InputError("CSV has no data rows")
    _check_increasing(labels)
    return labels, np.array(values).T


def _check_increasing(labels):
    try:
        keys = [float(t) for t in labels]
    except ValueError:
        keys = labels  # ISO dates and similar labels order lexicographically
    for i in range(1, len(keys)):
        if not keys[i] > keys[i - 1]:
            raise InputError(f"row {i + 2}: t is not strictly increasing")


def write_multistream_csv(path, X: np.ndarray, labels=None) -> None:
    N, n = X.shape
    labels = labels if labels is not None else range(1, n + 1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"stream_{i + 1}" for i in range(N)])
        for t, col in zip(labels, X.T):
            w.writerow([t] + [repr(float(v)) for v in col])


# --- shared pieces ----------------------------------------------------------------------

def _prepare_out(cfg: dict, args) -> str:
    out = args.out or cfg["out"]
    os.makedirs(out, exist_ok=True)
    cfgmod.save(cfg, os.path.join(out, "resolved_config.yaml"))
    return out


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _seed_manifest(out: str, seed: int, tags: dict) -> None:
    _write_json(os.path.join(out, "seeds.json"), {
        "master_seed": seed,
        "mixer": "numpy.random.SeedSequence(master_seed, spawn_key=key) -> PCG64",
        "keys": tags,
    })


def _apply_overrides(cfg: dict, args) -> dict:
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def calibration_alphas(cfg: dict) -> list:
    return sorted(set(cfg["detector"]["pfa_levels"]) | {cfg["detector"]["alpha"]}, reverse=True)


def calibrate_sidecar(cfg: dict, out: str, budget: int) -> dict:
    """Calibrate the detect-time statistic; reuses an existing sidecar with the same inputs."""
    path = os.path.join(out, SIDECAR)
    fp = cfgmod.fingerprint(cfg, "model", "priors", "detector")
    if os.path.exists(path):
        try:
            doc = load_calibration(path)
        except (OSError, ValueError):
            doc = None
        if isinstance(doc, dict) and doc.get("fingerprint") == fp and doc.get("budget") == budget:
            log.info("calibration sidecar %s is current; nothing to do", path)
            return doc
    dc = detector_config(cfg)
    log_max = null_max_sample(dc, budget, cfg["seed"], sim.TAG_CALIBRATION)
    records = []
    for a in calibration_alphas(cfg):
        spec = calibrate_threshold_mc(a, dc, budget, cfg["seed"], log_maxima=log_max)
        records.append(threshold_record(spec, cfg["seed"], cfg["detector"]["statistic"]))
    doc = {"fingerprint": fp, "budget": budget, "seed": cfg["seed"], "records": records}
    save_calibration(path, doc)
    return doc


def detect_series(X: np.ndarray, dc: DetectorConfig, A: float, stop: bool = False):
    """Run the detector over an ``(N, n)`` series; returns ``(alarm index or None, log R trajectory)``.

    ``alarm`` is the 0-based row of the first ``R >= A``.
    """
    x = np.ascontiguousarray(dc.model.path_residuals(X).T)
    runner = _KernelRunner(dc, horizon=x.shape[0])
    traj, n_done, _ = runner.run(x, math.log(A) if stop else np.inf)
    if np.any(np.isnan(traj[:n_done])):
        raise FloatingPointError("statistic became NaN")
    hit = np.flatnonzero(traj[:n_done] >= math.log(A))
    return (int(hit[0]) if hit.size else None), traj[:n_done]


# --- subcommands ------------------------------------------------------------------------

def cmd_simulate(cfg: dict, args) -> int:
    if args.budget is not None:
        cfg["experiment"]["budget"] = args.budget
    cfg = cfgmod.resolve(cfg)
    out = _prepare_out(cfg, args)
    try:
        ec = experiment_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    result = sim.run_experiment(ec)
    sim.write_table(result.estimates, os.path.join(out, "table1.csv"))
    sim.emit_plots(result.estimates, out)
    _write_json(os.path.join(out, SIDECAR), {"seed": cfg["seed"], "records": result.calibration})
    _seed_manifest(out, cfg["seed"], {"calibration": [sim.TAG_CALIBRATION, "j"], "delay": [sim.TAG_DELAY, "m", "j"]})
    for e in result.estimates:
        if e.censor_rate > 0:
            log.warning("%s m=%d PFA=%g: %.3g%% of runs censored", e.detector, e.m, e.pfa, 100 * e.censor_rate)
    print(f"wrote {len(result.estimates)} cells to {out}")
    return 0


def cmd_calibrate(cfg: dict, args) -> int:
    budget = args.budget if args.budget is not None else cfg["detector"]["calibration_budget"]
    if budget < 10 ** 4:
        raise ConfigError("calibration budget must be at least 10^4")
    out = _prepare_out(cfg, args)
    doc = calibrate_sidecar(cfg, out, budget)
    _seed_manifest(out, cfg["seed"], {"calibration": [sim.TAG_CALIBRATION, "j"]})
    for r in doc["records"]:
        print(f"alpha={r['alpha']:g}  A={r['A_mc']:.6g}  PFA_hat={r['pfa_hat']:.4g} (SE {r['pfa_se']:.2g})")
    return 0


def cmd_detect(cfg: dict, args) -> int:
    if not args.csv:
        raise ConfigError("detect needs --csv")
    labels, X = read_multistream_csv(args.csv, cfg["model"]["n_streams"])
    out = _prepare_out(cfg, args)
    d = cfg["detector"]
    dc = detector_config(cfg)
    if d["threshold_method"] == "lemma1":
        A = threshold_lemma1(d["alpha"], d["head_start"], dc.prior)
    else:
        budget = args.budget if args.budget is not None else d["calibration_budget"]
        doc = calibrate_sidecar(cfg, out, budget)
        A = next(r["A_mc"] for r in doc["records"] if math.isclose(r["alpha"], d["alpha"]))
    alarm, traj = detect_series(X, dc, A)
    with open(os.path.join(out, "trajectory.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "t", d["statistic"], f"log_{d['statistic']}"])
        for i, (t, v) in enumerate(zip(labels, traj)):
            w.writerow([i, t, repr(math.exp(v) if v < 709 else math.inf), repr(float(v))])
    report = {"statistic": d["statistic"], "alpha": d["alpha"], "threshold": A, "n_rows": len(labels),
              "alarm": alarm is not None, "alarm_row": alarm, "alarm_t": labels[alarm] if alarm is not None else None}
    _write_json(os.path.join(out, "detection.json"), report)
    _seed_manifest(out, cfg["seed"], {"calibration": [sim.TAG_CALIBRATION, "j"]})
    print(f"alarm at row {alarm} (t={labels[alarm]})" if alarm is not None else "no alarm")
    return 0


def cmd_streak(cfg: dict, args) -> int:
    s = cfg["streak"]
    scan = scan_config(cfg)
    if args.frame:
        try:
            data = streak2d.read_frame_csv(args.frame) if args.frame.endswith(".csv") else streak2d.read_frame(args.frame)
        except OSError as exc:
            raise InputError(f"cannot read frame: {exc}") from None
        except ValueError as exc:
            raise InputError(str(exc)) from None
        sigma = s["sigma"] if s["sigma"] is not None else streak2d.estimate_sigma(data)
        frame, truth = streak2d.Frame(data, sigma), None
    elif args.synthetic:
        sigma = s["sigma"] if s["sigma"] is not None else 1.0
        truth = streak2d.StreakSpec(**s["synthetic"], w_psf=s["w_psf"])
        try:
            frame = streak2d.render_frame(truth, (s["height"], s["width"]), sigma,
                                          replicate_rng(cfg["seed"], TAG_STREAK_SYNTHETIC))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    else:
        raise ConfigError("streak needs --frame PATH or --synthetic")
    try:
        dirs = streak2d.directions(scan, frame.shape)
        templates = streak2d.direction_templates(dirs, scan, frame.shape)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = _prepare_out(cfg, args)
    if truth is not None:
        streak2d.write_frame(os.path.join(out, "synthetic_frame.bin"), frame.data)
    n_frames = args.budget if args.budget is not None else s["calibration_frames"]
    h = streak2d.calibrate_h(frame.shape, scan, frame.sigma, s["false_alarm"], n_frames,
                             replicate_rng(cfg["seed"], TAG_STREAK_CALIBRATION), dirs)
    scans = streak2d.fma_scan(frame, scan, dirs, templates)
    result = streak2d.detect_streak(scans, h)
    extra = {"sigma": frame.sigma, "false_alarm_budget": s["false_alarm"], "calibration_frames": n_frames}
    if truth is not None:
        extra["truth"] = {"start_row": truth.y0, "end_row": truth.y1}
    streak2d.write_report(os.path.join(out, "streak_report.json"), result, extra)
    best = scans[result.direction.index] if result.detected else max(scans, key=lambda sc: sc.V.max())
    streak2d.write_trajectory(os.path.join(out, "streak_trajectory.csv"), best)
    _seed_manifest(out, cfg["seed"], {"streak_calibration": [TAG_STREAK_CALIBRATION],
                                      "streak_synthetic": [TAG_STREAK_SYNTHETIC]})
    if result.detected:
        print(f"streak detected: rows {result.start_row:.1f}-{result.end_row:.1f}, "
              f"angle {result.direction.angle_deg:.1f} deg, stop step {result.stop_step}")
    else:
        print("no streak")
    return 0


COMMANDS = {"simulate": cmd_simulate, "calibrate": cmd_calibrate, "detect": cmd_detect, "streak": cmd_streak}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msqcd", description="Multistream quickest change detection")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("simulate", "Monte Carlo delay / false-alarm table"),
                        ("calibrate", "Monte Carlo thresholds for the detect statistic"),
                        ("detect", "run the detector over a multistream CSV"),
                        ("streak", "streak detection in an image frame")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="YAML config (defaults used when omitted)")
        p.add_argument("--out", help="output directory (overrides config 'out')")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--budget", type=int, help="Monte Carlo budget (replicates or noise frames)")
        if name == "detect":
            p.add_argument("--csv", help="input series, header t,stream_1,...,stream_N")
        if name == "streak":
            g = p.add_mutually_exclusive_group()
            g.add_argument("--frame", help="frame file (binary, or .csv)")
            g.add_argument("--synthetic", action="store_true", help="render the configured synthetic streak")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.resolve({})
        cfg = cfgmod.resolve(_apply_overrides(cfg, args))
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime fault", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

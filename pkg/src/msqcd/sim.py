"""Monte Carlo harness for operating characteristics of the mixture SR detectors.

A run has two phases per detector:

1. calibration -- replicates with ``nu ~ prior`` and no change give the
   distribution of ``max_{n <= nu} R(n)``, from which each PFA level gets a
   threshold;
2. delay -- for every affected-stream count ``m`` the change hits streams
   ``0..m-1`` at ``nu ~ prior`` and the run continues until the highest
   threshold is crossed; every level's stopping time is read off the same path.

Replicate ``j`` always draws from ``replicate_rng(seed, tag, j)``, so results do
not depend on how replicates are split across workers, and both detectors see
identical data.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .detector import (DetectorConfig, _KernelRunner, calibrate_from_sample, null_max_sample, replicate_rng,
                       theoretical_add, threshold_lemma1, whitened_path)
from .model import GaussianMeanShiftModel, PowerLawProfile
from .priors import ChangePointPrior, ParameterMixing, PatternPrior

TAG_CALIBRATION = 0
TAG_DELAY = 1

PLOT_COLUMNS = ("log10_PFA", "m", "ADD", "SE", "ADD_theoretical")


@dataclass
class ExperimentConfig:
    n_streams: int = 10
    profile_C: float = 1.0
    profile_gamma: float = 1.1
    sigma: float = 2.0
    ar: tuple = ()
    anchor: str = "absolute"
    rho: float = 0.1
    pi_minus1: float = 0.0
    q: float = 0.1
    K: int | None = None
    m_values: tuple = (1, 2, 3)
    theta: float = 0.1
    grid: tuple = (0.1, 0.3, 0.01)
    pfa_levels: tuple = (1e-1, 5e-2, 1e-2, 5e-3, 1e-3, 5e-4)
    budget: int = 100_000
    calibration_budget: int | None = None
    seed: int = 20240101
    detectors: tuple = ("R_ptheta", "R_pW")
    threshold_method: str = "calibrated"
    head_start: float = 0.0
    window: int | None = None
    post_horizon: int | None = None
    workers: int = 1

    def __post_init__(self):
        if self.budget < 10 ** 3:
            raise ValueError("budget must be at least 10^3")
        if any(not 0.0 < a < 1.0 for a in self.pfa_levels):
            raise ValueError("PFA levels must lie in (0, 1)")
        if self.threshold_method not in ("calibrated", "lemma1"):
            raise ValueError("threshold_method must be 'calibrated' or 'lemma1'")
        for d in self.detectors:
            if d not in ("R_ptheta", "R_pW"):
                raise ValueError(f"unsupported detector {d!r}")
        if max(self.m_values) > self.n_streams:
            raise ValueError("m exceeds the number of streams")
        self.pfa_levels = tuple(sorted(self.pfa_levels, reverse=True))

    def model(self) -> GaussianMeanShiftModel:
        return GaussianMeanShiftModel(PowerLawProfile(self.profile_C, self.profile_gamma), self.sigma,
                                      rho=list(self.ar) or None, n_streams=self.n_streams, anchor=self.anchor)

    def prior(self) -> ChangePointPrior:
        return ChangePointPrior.geometric(self.rho, self.pi_minus1)

    def pattern(self) -> PatternPrior:
        return PatternPrior.uniform(self.n_streams, self.q / (1.0 - self.q), self.K)

    def mixing(self, detector: str) -> ParameterMixing:
        if detector == "R_ptheta":
            return ParameterMixing.degenerate(self.theta)
        return ParameterMixing.uniform_grid(*self.grid)

    def detector_config(self, detector: str) -> DetectorConfig:
        return DetectorConfig(self.model(), self.pattern(), self.mixing(detector), self.prior(),
                              self.head_start, self.window)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


@dataclass
class McEstimate:
    detector: str
    m: int
    pfa: float
    threshold: float
    add: float
    se: float
    count: int
    censor_rate: float
    add_theoretical: float
    pfa_hat: float = math.nan
    pfa_se: float = math.nan
    fa_rate: float = math.nan


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    estimates: list = field(default_factory=list)
    calibration: list = field(default_factory=list)

    def cell(self, detector: str, m: int, pfa: float) -> McEstimate:
        for e in self.estimates:
            if e.detector == detector and e.m == m and math.isclose(e.pfa, pfa):
                return e
        raise KeyError((detector, m, pfa))


# --- workers ------------------------------------------------------------------------

def _delay_chunk(args):
    """Stopping times for replicates ``lo..hi`` of one (detector, m) cell."""
    config, detector, m, log_thresholds, horizon_post, lo, hi = args
    dc = config.detector_config(detector)
    runner = _KernelRunner(dc)
    model, prior = dc.model, dc.prior
    affected = tuple(range(m))
    stop = float(np.max(log_thresholds))
    nus = np.empty(hi - lo, dtype=np.int64)
    T = np.full((hi - lo, len(log_thresholds)), -1, dtype=np.int64)
    H_used = np.empty(hi - lo, dtype=np.int64)
    for j in range(lo, hi):
        rng = replicate_rng(config.seed, TAG_DELAY, m, j)
        nu = prior.sample(rng)
        H = max(nu, 0) + horizon_post
        runner.ensure(H)
        x = whitened_path(model, nu, affected, config.theta, H, rng, runner.tables)
        traj, n_done, _ = runner.run(x, stop)
        r = j - lo
        nus[r] = nu
        H_used[r] = H
        for a, lt in enumerate(log_thresholds):
            hit = np.flatnonzero(traj[:n_done] >= lt)
            if hit.size:
                T[r, a] = hit[0] + 1
    return nus, T, H_used


def _null_chunk(args):
    config, detector, lo, hi = args
    return null_max_sample(config.detector_config(detector), hi - lo, config.seed, TAG_CALIBRATION, lo)


def _map_chunks(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) == 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _chunks(n: int, workers: int):
    size = max(1, math.ceil(n / max(workers, 1)))
    return [(lo, min(n, lo + size)) for lo in range(0, n, size)]


# --- experiment ---------------------------------------------------------------------

def default_post_horizon(config: ExperimentConfig, A_max: float) -> int:
    """20x the first-order delay for one affected stream at the smallest grid point."""
    model = config.model()
    theta_min = min(config.theta, config.grid[0])
    info = model.information_number([0], np.full(config.n_streams, theta_min))
    return int(math.ceil(20.0 * theoretical_add(max(A_max, math.e), info)))


def calibrate_levels(config: ExperimentConfig, detector: str) -> list:
    """Threshold per PFA level for one detector (MC calibration or the analytic bound)."""
    dc = config.detector_config(detector)
    if config.threshold_method == "lemma1":
        return [dict(detector=detector, alpha=a, A=threshold_lemma1(a, config.head_start, dc.prior),
                     pfa_hat=math.nan, pfa_se=math.nan, budget=0) for a in config.pfa_levels]
    budget = config.calibration_budget or config.budget
    if budget < 10 ** 4 and config.budget >= 10 ** 4:
        raise ValueError("calibration budget must be at least 10^4")
    jobs = [(config, detector, lo, hi) for lo, hi in _chunks(budget, config.workers)]
    log_max = np.concatenate(_map_chunks(_null_chunk, jobs, config.workers))
    out = []
    for a in config.pfa_levels:
        spec = calibrate_from_sample(a, log_max, threshold_lemma1(a, config.head_start, dc.prior))
        out.append(dict(detector=detector, alpha=a, A=spec.A_mc, pfa_hat=spec.pfa_hat, pfa_se=spec.pfa_se,
                        budget=budget, A_lemma1=spec.A))
    return out


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Estimate ADD (conditional on no false alarm) for every (detector, m, PFA) cell."""
    result = ExperimentResult(config)
    model = config.model()
    for detector in config.detectors:
        levels = calibrate_levels(config, detector)
        result.calibration.extend(levels)
        thresholds = np.array([lv["A"] for lv in levels])
        log_thr = np.log(thresholds)
        post = config.post_horizon or default_post_horizon(config, float(thresholds.max()))
        for m in config.m_values:
            jobs = [(config, detector, m, log_thr, post, lo, hi) for lo, hi in _chunks(config.budget, config.workers)]
            parts = _map_chunks(_delay_chunk, jobs, config.workers)
            nus = np.concatenate([p[0] for p in parts])
            T = np.concatenate([p[1] for p in parts])
            H = np.concatenate([p[2] for p in parts])
            info = model.information_number(range(m), np.full(config.n_streams, config.theta))
            k = np.maximum(nus, 0)
            for a, lv in enumerate(levels):
                Ta = T[:, a]
                censored = Ta < 0
                fa = (~censored) & (Ta <= nus)
                ok = ~fa
                delay = np.where(censored, H - k, Ta - k)[ok]
                count = int(ok.sum())
                add = float(np.mean(delay)) if count and not censored[ok].all() else math.nan
                se = float(np.std(delay, ddof=1) / math.sqrt(count)) if count > 1 else math.nan
                A = float(lv["A"])
                result.estimates.append(McEstimate(
                    detector=detector, m=m, pfa=lv["alpha"], threshold=A, add=add, se=se, count=count,
                    censor_rate=float(censored[ok].mean()) if count else 1.0,
                    add_theoretical=theoretical_add(A, info) if A > 1 else math.nan,
                    pfa_hat=lv["pfa_hat"], pfa_se=lv["pfa_se"], fa_rate=float(fa.mean())))
    return result


# --- output -------------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_table(estimates, path) -> None:
    cols = [f.name for f in fields(McEstimate)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for e in estimates:
            w.writerow([_fmt(getattr(e, c)) for c in cols])


def read_table(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for f in fields(McEstimate):
                v = row[f.name]
                kw[f.name] = v if f.type in ("str", str) else (int(v) if f.type in ("int", int) else float(v))
            out.append(McEstimate(**kw))
    return out


def emit_plots(estimates, outdir) -> list:
    """One CSV per detector with columns ``log10_PFA, m, ADD, SE, ADD_theoretical``."""
    if not estimates:
        raise ValueError("no estimates to write")
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for det in sorted({e.detector for e in estimates}):
        path = os.path.join(outdir, f"fig1_{det}.csv")
        rows = sorted((e for e in estimates if e.detector == det), key=lambda e: (e.m, -e.pfa))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PLOT_COLUMNS)
            for e in rows:
                w.writerow([_fmt(math.log10(e.pfa)), e.m, _fmt(e.add), _fmt(e.se), _fmt(e.add_theoretical)])
        paths.append(path)
    return paths


def read_plot_csv(path) -> list:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != PLOT_COLUMNS:
            raise ValueError(f"unexpected columns {header}")
        return [(float(r[0]), int(r[1]), float(r[2]), float(r[3]), float(r[4])) for r in rd]

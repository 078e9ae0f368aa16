"""Stopping rules, threshold selection and first-order delay approximations."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .model import GaussianMeanShiftModel, InfoNumber
from .priors import ChangePointPrior, ParameterMixing, PatternPrior
from .statistics import DetectionState

STATISTICS = ("R_ptheta", "R_pW", "cusum", "fma")


@dataclass
class ThresholdSpec:
    alpha: float
    head_start: float
    A: float
    A_mc: float | None = None
    pfa_hat: float | None = None
    pfa_se: float | None = None
    budget: int | None = None

    def __post_init__(self):
        if not self.A > 0:
            raise ValueError("threshold must be positive")


@dataclass
class DetectionOutcome:
    """Result of one monitored run; ``stop_time`` is ``None`` when censored."""

    stop_time: int | None
    statistic: str
    threshold: float
    value: float | None = None
    trajectory: list = field(default_factory=list)

    @property
    def censored(self) -> bool:
        return self.stop_time is None


def threshold_lemma1(alpha: float, head_start: float, prior: ChangePointPrior) -> float:
    """Threshold ``(r b + nu_bar) / alpha`` guaranteeing a weighted PFA of at most ``alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if not math.isfinite(prior.mean):
        raise ValueError("prior mean is not finite")
    return (head_start * prior.b + prior.mean) / alpha


def theoretical_add(A: float, info: InfoNumber) -> float:
    """First-order delay approximation ``Psi(log A / I)``."""
    if not A > 1.0:
        raise ValueError("threshold must exceed 1")
    if not info.value > 0:
        raise ValueError("information number must be positive")
    return float(info.Psi(math.log(A) / info.value))


def lower_bound_delay(alpha: float, info: InfoNumber, beta: float = 0.0, eps: float = 0.0,
                      delta: float = 0.0) -> float:
    """Asymptotic lower bound ``Psi((1 - eps) |log alpha| / (I + beta + delta))``."""
    if not 0.0 <= eps < 1.0 or delta < 0 or beta < 0:
        raise ValueError("need 0 <= eps < 1, delta >= 0, beta >= 0")
    return float(info.Psi((1.0 - eps) * abs(math.log(alpha)) / (info.value + beta + delta)))


# --- running a detector --------------------------------------------------------

def _value(snap, statistic: str, index: int = 0) -> float:
    if statistic == "R_pW":
        return snap.R_pW
    if statistic == "R_ptheta":
        return float(snap.R_ptheta[index])
    if statistic == "cusum":
        return snap.cusum
    if statistic == "fma":
        return snap.fma
    raise ValueError(f"unknown statistic {statistic!r}")


def _columns(source):
    if isinstance(source, np.ndarray):
        if source.ndim != 2:
            raise ValueError("path arrays must be (N, n)")
        return iter(source.T)
    return iter(source)


def run_detection(source, state: DetectionState, statistic: str, threshold: float, horizon: int,
                  theta_index: int = 0, keep_trajectory: bool = False) -> DetectionOutcome:
    """Advance ``state`` over ``source`` until the statistic reaches ``threshold``.

    ``source`` is an ``(N, n)`` array (as returned by ``simulate_path``) or any
    iterable of observation vectors.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if statistic not in STATISTICS:
        raise ValueError(f"unknown statistic {statistic!r}")
    it = _columns(source)
    traj = []
    for n in range(1, horizon + 1):
        try:
            x = next(it)
        except StopIteration:
            break
        except Exception as exc:  # noqa: BLE001
            raise RuntimeError(f"data source fault at n={n}: {exc}") from exc
        v = _value(state.advance(x), statistic, theta_index)
        if keep_trajectory:
            traj.append(v)
        if v >= threshold:
            return DetectionOutcome(n, statistic, threshold, v, traj)
    return DetectionOutcome(None, statistic, threshold, None, traj)


# --- Monte Carlo calibration -------------------------------------------------------

@dataclass
class DetectorConfig:
    """Everything needed to simulate one SR-type detector on the mean-shift model."""

    model: GaussianMeanShiftModel
    pattern: PatternPrior
    mixing: ParameterMixing
    prior: ChangePointPrior
    head_start: float = 0.0
    window: int | None = None

    def kernel_args(self, horizon: int):
        sig_abs, sig_age = _kernels.signal_tables(self.model, horizon)
        with np.errstate(divide="ignore"):
            logp = np.log(self.pattern.weights)
            log_r = math.log(self.head_start) if self.head_start > 0 else -math.inf
        return dict(
            sig_abs=sig_abs, sig_age=sig_age,
            anchor=_kernels.ANCHOR_CHANGE if self.model.anchor == "change" else _kernels.ANCHOR_ABSOLUTE,
            p=self.model.p, thetas=np.ascontiguousarray(self.mixing.stream_grid(self.model.n_streams)),
            inv_var=1.0 / self.model.sigma ** 2, logw=np.log(self.mixing.weights), logp=logp,
            K=self.pattern.K, equal_full=self.pattern.equal_full, log_c=self.pattern.log_normalizer,
            log_r=log_r, window=self.window or 0,
        )


def replicate_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Generator for replicate ``key`` of a run with ``master_seed``.

    The mixer is numpy's ``SeedSequence(master_seed, spawn_key=key)``, so each
    replicate's stream depends only on its own index.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=tuple(key))))


def whitened_path(model: GaussianMeanShiftModel, nu: int, affected, theta, horizon: int,
                  rng: np.random.Generator, tables=None) -> np.ndarray:
    """AR-whitened observations ``(horizon, N)``: driving noise plus whitened signal."""
    x = rng.standard_normal((horizon, model.n_streams)) * model.sigma
    k = max(int(nu), 0)
    if affected and horizon > k:
        sig_abs, sig_age = tables if tables is not None else _kernels.signal_tables(model, horizon)
        th = np.broadcast_to(np.asarray(theta, dtype=float), (model.n_streams,))
        t = np.arange(k + 1, horizon + 1)
        cols = list(affected)
        if model.anchor == "change":
            s = sig_age[t - k][:, cols]
        else:
            s = sig_abs[t, np.minimum(model.p, t - k - 1)][:, cols]
        x[k:, cols] += th[cols] * s
    return x


class _KernelRunner:
    """Caches kernel arguments, regrowing the signal tables when a longer path shows up."""

    def __init__(self, config: DetectorConfig, horizon: int = 256):
        self.config = config
        self._resize(horizon)

    def _resize(self, horizon: int) -> None:
        self.horizon = horizon
        self.args = self.config.kernel_args(horizon)
        self.tables = (self.args["sig_abs"], self.args["sig_age"])

    def ensure(self, horizon: int) -> None:
        if horizon > self.horizon:
            self._resize(max(horizon, 2 * self.horizon))

    def run(self, x: np.ndarray, stop_log: float = np.inf):
        self.ensure(x.shape[0])
        buf = np.empty((x.shape[0], self.config.mixing.size))
        a = self.args
        if a["anchor"] == _kernels.ANCHOR_ABSOLUTE:
            traj, n_done, ok = _kernels.sr_trajectory_linear(
                x, a["sig_abs"], a["p"], a["thetas"], a["inv_var"], a["logw"], a["logp"], a["K"],
                a["equal_full"], a["log_c"], a["log_r"], a["window"], stop_log, buf)
            if ok:
                return traj, n_done, buf
        traj, n_done = _kernels.sr_trajectory(x, stop_log=stop_log, log_rg_out=buf, **a)
        return traj, n_done, buf


def null_max_sample(config: DetectorConfig, budget: int, seed: int, tag: int = 0,
                    start: int = 0) -> np.ndarray:
    """For replicates with ``nu ~ prior`` and no change, ``max_{n <= nu} log R(n)``.

    A false alarm at threshold ``A`` happens exactly when the entry is ``>= log A``;
    ``-inf`` marks ``nu <= 0`` (no false alarm possible). Replicates are indexed
    ``start .. start + budget - 1``.
    """
    out = np.full(budget, -np.inf)
    runner = _KernelRunner(config)
    for r in range(budget):
        rng = replicate_rng(seed, tag, start + r)
        nu = config.prior.sample(rng)
        if nu <= 0:
            continue
        x = whitened_path(config.model, nu, (), 0.0, nu, rng)
        traj, _, _ = runner.run(x)
        out[r] = traj.max()
    return out


def pfa_estimate(log_maxima: np.ndarray, A: float) -> tuple[float, float]:
    """Weighted PFA estimate and its standard error at threshold ``A``."""
    p = float(np.mean(log_maxima >= math.log(A)))
    return p, math.sqrt(p * (1.0 - p) / log_maxima.size)


def calibrate_from_sample(alpha: float, log_maxima: np.ndarray, A_upper: float,
                          max_iter: int = 200) -> ThresholdSpec:
    """Bisection on ``log A`` for the smallest threshold with ``PFA(A) <= alpha``.

    The bracket is narrowed to ``1e-9`` in ``log A``; the result must then satisfy
    ``|PFA(A) - alpha| <= max(0.05 alpha, 2 SE)`` or the budget is too small.
    """
    R = log_maxima.size
    se_target = math.sqrt(alpha * (1 - alpha) / R)
    tol = max(0.05 * alpha, 2.0 * se_target)
    lo, hi = math.log(A_upper / 100.0), math.log(A_upper)
    for _ in range(60):
        if pfa_estimate(log_maxima, math.exp(lo))[0] >= alpha:
            break
        lo -= math.log(100.0)
    else:
        raise RuntimeError("could not bracket the threshold from below")
    for _ in range(60):
        if pfa_estimate(log_maxima, math.exp(hi))[0] <= alpha:
            break
        hi += math.log(100.0)
    else:
        raise RuntimeError("could not bracket the threshold from above")
    for _ in range(max_iter):
        if hi - lo < 1e-9:
            break
        mid = 0.5 * (lo + hi)
        if pfa_estimate(log_maxima, math.exp(mid))[0] > alpha:
            lo = mid
        else:
            hi = mid
    p, se = pfa_estimate(log_maxima, math.exp(hi))
    if abs(p - alpha) > tol:
        raise RuntimeError(f"calibration for alpha={alpha} missed the target (PFA {p:.3g}); increase the MC budget")
    return ThresholdSpec(alpha, 0.0, A_upper, math.exp(hi), p, se, R)


def calibrate_threshold_mc(alpha: float, config: DetectorConfig, budget: int, seed: int,
                           log_maxima: np.ndarray | None = None) -> ThresholdSpec:
    """Monte Carlo threshold hitting a weighted PFA of ``alpha``."""
    if budget < 10 ** 4:
        raise ValueError("calibration needs a budget of at least 10^4 replicates")
    if log_maxima is None:
        log_maxima = null_max_sample(config, budget, seed)
    A1 = threshold_lemma1(alpha, config.head_start, config.prior)
    spec = calibrate_from_sample(alpha, log_maxima, A1)
    spec.head_start = config.head_start
    return spec


def save_calibration(path, records) -> None:
    """Atomically write calibration records (a list of dicts or a document)."""
    tmp = f"{path}.tmp"
    doc = records if isinstance(records, dict) else list(records)
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_calibration(path):
    with open(path) as fh:
        return json.load(fh)


def threshold_record(spec: ThresholdSpec, seed: int, detector: str) -> dict:
    d = asdict(spec)
    d.update(seed=seed, detector=detector, A_lemma1=d.pop("A"))
    return d

"""Likelihood-ratio ledger and the mixture Shiryaev-Roberts family of statistics.

All likelihood ratios are stored as logs, one per (candidate change point,
stream, grid point). Mixtures over patterns are evaluated either with the
product form (``K = N``) or with the elementary-symmetric recurrence; both run
in log space so that post-change ratios growing like ``exp(I psi(n))`` do not
overflow.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .model import StreamHistory
from .priors import ParameterMixing, PatternPrior, log_elementary_symmetric

BRUTEFORCE_MAX_STREAMS = 20


def _log_expm1(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(s > 50.0, s, np.log(np.expm1(np.minimum(s, 50.0))))


def log_mixture_lr(log_lr: np.ndarray, prior: PatternPrior) -> np.ndarray:
    """``log Lambda`` for per-stream log-LRs along the last axis (size ``N``)."""
    log_lr = np.asarray(log_lr, dtype=float)
    if log_lr.shape[-1] != prior.N:
        raise ValueError(f"expected {prior.N} streams, got {log_lr.shape[-1]}")
    with np.errstate(divide="ignore"):
        logp = np.log(prior.weights)
    terms = log_lr + logp
    if prior.equal_full:
        s = np.logaddexp(0.0, terms).sum(axis=-1)
        return prior.log_normalizer + _log_expm1(s)
    le = log_elementary_symmetric(terms, prior.K)
    m = np.max(le, axis=-1, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = m_safe[..., 0] + np.log(np.exp(le - m_safe).sum(axis=-1))
    return prior.log_normalizer + out


def mixture_lr_product(lrs, prior: PatternPrior) -> float | np.ndarray:
    """Mixture LR ``sum_B p_B prod_{i in B} LR_i`` via the product / recurrence form."""
    lrs = np.asarray(lrs, dtype=float)
    if np.any(lrs < 0):
        raise ValueError("likelihood ratios must be nonnegative")
    with np.errstate(divide="ignore"):
        out = np.exp(log_mixture_lr(np.log(lrs), prior))
    return float(out) if out.ndim == 0 else out


def mixture_lr_bruteforce(lrs, prior: PatternPrior) -> float:
    """Exhaustive sum over every admissible pattern; reference for the fast path."""
    lrs = np.asarray(lrs, dtype=float).reshape(-1)
    if prior.N > BRUTEFORCE_MAX_STREAMS:
        raise ValueError(f"brute force limited to N <= {BRUTEFORCE_MAX_STREAMS}")
    if np.any(lrs < 0):
        raise ValueError("likelihood ratios must be nonnegative")
    return math.fsum(pB * float(np.prod(lrs[list(B)])) for B, pB in prior.patterns())


def _fsum_log(log_terms: np.ndarray) -> float:
    """``log sum exp`` with a compensated sum of the shifted terms."""
    m = float(np.max(log_terms)) if log_terms.size else -math.inf
    if not math.isfinite(m):
        return m
    return m + math.log(math.fsum(np.exp(log_terms - m)))


class LrLedger:
    """Running log-LRs ``log LR_{i,theta_g}(k, n)`` for the retained candidates ``k``.

    With ``window`` set, only the ``window`` most recent candidates are kept.
    Otherwise the ledger grows up to ``max_candidates`` and then refuses.
    """

    def __init__(self, n_streams: int, n_grid: int, window: int | None = None,
                 max_candidates: int = 10_000):
        if window is not None and window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.max_candidates = max_candidates
        self.n = 0
        self.ks = np.zeros(0, dtype=np.int64)
        self.log_lr = np.zeros((0, n_streams, n_grid))

    def open_candidate(self) -> None:
        """Add ``k = n`` with unit LR (about to become ``n - 1`` once advanced)."""
        shape = self.log_lr.shape[1:]
        if self.window is not None and self.ks.size == self.window:
            self.ks = self.ks[1:]
            self.log_lr = self.log_lr[1:]
        elif self.window is None and self.ks.size >= self.max_candidates:
            raise OverflowError(f"ledger exceeded {self.max_candidates} candidate change points; "
                                "use a window or raise max_candidates")
        self.ks = np.append(self.ks, self.n)
        self.log_lr = np.concatenate([self.log_lr, np.zeros((1,) + shape)])

    def multiply(self, log_increments: np.ndarray) -> None:
        self.log_lr += log_increments
        self.n += 1


@dataclass
class Snapshot:
    n: int
    R_pW: float
    R_ptheta: np.ndarray
    cusum: float
    fma: float
    log_R_pW: float


class DetectionState:
    """Online state of the mixture SR statistics for independent streams.

    Parameters
    ----------
    model : GaussianMeanShiftModel or ARCoefChangeModel or JointLlrModel
        Supplies ``llr_block(history, t, ks, grid)``.
    pattern : PatternPrior
    mixing : ParameterMixing
        Grid of post-change parameters; a one-point grid gives ``R_{p,theta}``.
    head_start : float
        Initial value ``r`` of the statistic.
    window : int, optional
        Number of candidate change points kept (window-limited statistic).
    fma_window : int, optional
        Length of the moving sum used for the FMA statistic.
    track : bool
        Keep a per-step trajectory for :meth:`write_trajectory`.
    """

    def __init__(self, model, pattern: PatternPrior, mixing: ParameterMixing, head_start: float = 0.0,
                 window: int | None = None, max_candidates: int = 10_000, fma_window: int | None = None,
                 track: bool = False):
        if head_start < 0:
            raise ValueError("head start must be >= 0")
        if pattern.N != model.n_streams:
            raise ValueError("pattern prior and model disagree on the number of streams")
        if fma_window is not None and window is not None and fma_window > window:
            raise ValueError("fma_window cannot exceed the candidate window")
        self.model = model
        self.pattern = pattern
        self.mixing = mixing
        self.grid = mixing.stream_grid(model.n_streams) if getattr(model, "kind", "") != "joint" else mixing.points
        self.log_w = np.log(mixing.weights)
        self.head_start = float(head_start)
        self.fma_window = fma_window
        self.history = StreamHistory(model.n_streams, getattr(model, "p", 0) + 1 if getattr(model, "kind", "") != "joint"
                                     else max_candidates + 1)
        n_cols = model.n_streams if getattr(model, "kind", "") != "joint" else len(model.patterns)
        self.ledger = LrLedger(n_cols, mixing.size, window, max_candidates)
        self.n = 0
        self.log_R_ptheta = np.full(mixing.size, math.log(head_start) if head_start > 0 else -math.inf)
        self.log_R_pW = math.log(head_start) if head_start > 0 else -math.inf
        self.cusum = 0.0
        self.fma = 0.0
        self.track = track
        self.trajectory: list[tuple] = []

    @property
    def R_pW(self) -> float:
        return math.exp(self.log_R_pW) if self.log_R_pW < 709.0 else math.inf

    @property
    def R_ptheta(self) -> np.ndarray:
        return np.exp(np.minimum(self.log_R_ptheta, 709.0))

    def log_mixture(self) -> np.ndarray:
        """``log Lambda_{p,theta_g}(k, n)`` for every retained ``k``: ``(n_k, G)``."""
        lr = np.swapaxes(self.ledger.log_lr, 1, 2)
        if getattr(self.model, "kind", "") == "joint":
            return _log_weighted_sum(lr, self.model.log_pattern_weights)
        return log_mixture_lr(lr, self.pattern)

    def advance(self, x) -> Snapshot:
        """Consume observation vector ``X_n`` and update every statistic."""
        self.history.append(x)
        self.ledger.open_candidate()
        n = self.history.n
        self.ledger.multiply(self.model.llr_block(self.history, n, self.ledger.ks, self.grid))
        self.n = n
        logmix = self.log_mixture()
        logR = np.empty(self.mixing.size)
        has_zero = self.ledger.ks[0] == 0
        for g in range(self.mixing.size):
            terms = logmix[:, g]
            if has_zero and self.head_start > 0:
                terms = np.append(terms, math.log(self.head_start) + terms[0])
            logR[g] = _fsum_log(terms)
        if np.any(np.isnan(logR)):
            raise FloatingPointError(f"non-finite statistic at n={n}")
        self.log_R_ptheta = logR
        self.log_R_pW = _fsum_log(self.log_w + logR)
        if getattr(self.model, "kind", "") != "joint":
            self.cusum = cusum_glr(self)
            if self.fma_window is not None:
                self.fma = fma_multistream(self, self.fma_window)
        snap = Snapshot(n, self.R_pW, self.R_ptheta, self.cusum, self.fma, self.log_R_pW)
        if self.track:
            self.trajectory.append((n, self.R_pW, *self.R_ptheta.tolist(), self.cusum, self.fma))
        return snap

    def write_trajectory(self, path) -> None:
        """CSV with columns ``n, R_pW, R_ptheta_<g>..., cusum, fma``."""
        cols = ["n", "R_pW"] + [f"R_ptheta_{g}" for g in range(self.mixing.size)] + ["cusum", "fma"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in self.trajectory:
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def _log_weighted_sum(log_lr: np.ndarray, log_weights: np.ndarray) -> np.ndarray:
    t = log_lr + log_weights
    m = np.max(t, axis=-1, keepdims=True)
    return m[..., 0] + np.log(np.exp(t - m).sum(axis=-1))


def advance(state: DetectionState, x) -> Snapshot:
    return state.advance(x)


def cusum_glr(state: DetectionState, window: int | None = None) -> float:
    """``sum_i max_k max_g lambda_{i,g}(k, n)`` over the last ``window`` candidates."""
    lr = state.ledger.log_lr
    if lr.shape[0] == 0:
        raise ValueError("empty window")
    if window is not None:
        if window < 1:
            raise ValueError("empty window")
        lr = lr[-window:]
    return float(lr.max(axis=(0, 2)).sum())


def fma_multistream(state: DetectionState, window: int) -> float:
    """``sum_i max_g`` of the LLR accumulated over the last ``window`` observations.

    The moving sum of increments equals the ledger entry for ``k = max(0, n - window)``.
    """
    k = max(0, state.n - window)
    idx = np.searchsorted(state.ledger.ks, k)
    if idx >= state.ledger.ks.size or state.ledger.ks[idx] != k:
        raise ValueError("FMA window longer than the retained candidate window")
    return float(state.ledger.log_lr[idx].max(axis=1).sum())


class JointLlrModel:
    """Dependent-stream model given by a joint LLR callback.

    ``llr(B, theta, k, t, history)`` returns ``log f_{B,theta}(X_t | X^{t-1}) / g(X_t | X^{t-1})``
    for the hypothesis of a change at ``k`` in pattern ``B``. Mixtures are
    evaluated by enumerating every pattern of ``prior``.
    """

    kind = "joint"

    def __init__(self, llr, pattern: PatternPrior):
        if pattern.N > BRUTEFORCE_MAX_STREAMS:
            raise ValueError(f"joint model limited to N <= {BRUTEFORCE_MAX_STREAMS}")
        self.llr = llr
        self.n_streams = pattern.N
        self.patterns = [B for B, _ in pattern.patterns()]
        self.log_pattern_weights = np.log([pattern.weight(B) for B in self.patterns])

    def llr_block(self, history, t, ks, grid) -> np.ndarray:
        out = np.empty((len(ks), len(self.patterns), grid.shape[0]))
        for a, k in enumerate(ks):
            for b, B in enumerate(self.patterns):
                for g in range(grid.shape[0]):
                    out[a, b, g] = self.llr(B, grid[g], int(k), t, history)
        return out


def independent_joint_llr(model, n_streams: int):
    """Joint LLR callback for independent streams, summing per-stream increments."""

    def llr(B, theta, k, t, history):
        grid = np.broadcast_to(np.asarray(theta, dtype=float), (n_streams,))[None, :]
        inc = model.llr_block(history, t, np.array([k]), grid)[0, :, 0]
        return float(sum(inc[i] for i in B))

    return llr

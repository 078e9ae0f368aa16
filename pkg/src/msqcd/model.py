"""Stream models: conditional densities, LLR increments, simulators and information numbers.

Two concrete multistream models are provided, both with mutually independent
streams:

* :class:`GaussianMeanShiftModel` -- a deterministic signal ``theta_i * S_n(i)``
  appears after the change point in additive Gaussian AR(p) noise.
* :class:`ARCoefChangeModel` -- the coefficient vector of a Gaussian AR(p)
  recursion switches from ``theta_star_i`` to ``theta_i``.

Observations before time 1 (and the AR noise before time 1) are zero.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

INF = math.inf


class StreamHistory:
    """Ring buffer holding the most recent observations of every stream.

    Parameters
    ----------
    n_streams : int
        Number of streams ``N``.
    capacity : int
        Number of past observation vectors retained.
    """

    def __init__(self, n_streams: int, capacity: int):
        if n_streams < 1 or capacity < 1:
            raise ValueError("n_streams and capacity must be >= 1")
        self.n_streams = int(n_streams)
        self.capacity = int(capacity)
        self._buf: deque[np.ndarray] = deque(maxlen=self.capacity)
        self.n = 0

    def append(self, x) -> None:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.n_streams:
            raise ValueError(f"expected {self.n_streams} values, got {x.shape[0]}")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"non-finite observation at t={self.n + 1}")
        self._buf.append(x.copy())
        self.n += 1

    def __len__(self) -> int:
        return len(self._buf)

    def value(self, stream: int, t: int) -> float:
        """Observation ``X_t(stream)``; zero for ``t <= 0``."""
        if not 0 <= stream < self.n_streams:
            raise IndexError(f"stream index {stream} out of range")
        if t > self.n:
            raise IndexError(f"t={t} exceeds history length n={self.n}")
        if t <= 0:
            return 0.0
        back = self.n - t
        if back >= len(self._buf):
            raise IndexError(f"t={t} no longer retained (capacity {self.capacity})")
        return float(self._buf[-1 - back][stream])

    def lags(self, t: int, p: int) -> np.ndarray:
        """Matrix ``(N, p)`` with column ``j-1`` holding ``X_{t-j}``."""
        out = np.zeros((self.n_streams, p))
        for j in range(1, p + 1):
            s = t - j
            if s >= 1:
                out[:, j - 1] = self._buf[-1 - (self.n - s)]
        return out

    def current(self) -> np.ndarray:
        if self.n == 0:
            raise IndexError("empty history")
        return self._buf[-1]


@dataclass(frozen=True)
class PowerLawProfile:
    """Signal profile ``S_n = C * n**gamma`` (zero for ``n <= 0``)."""

    C: float = 1.0
    gamma: float = 1.0

    def __call__(self, n):
        n = np.asarray(n, dtype=float)
        return np.where(n > 0, self.C * np.power(np.maximum(n, 0.0), self.gamma), 0.0)

    @property
    def psi_exponent(self) -> float:
        return 2.0 * self.gamma + 1.0

    @property
    def Q(self) -> float:
        """Limit of ``psi(n)^{-1} * sum_{t<=n} S_t^2`` with ``psi(n) = n^(2 gamma + 1)``."""
        return self.C ** 2 / (2.0 * self.gamma + 1.0)


@dataclass(frozen=True)
class InfoNumber:
    """Information number ``I`` with growth function ``psi(n) = n**psi_exponent``."""

    value: float
    psi_exponent: float = 1.0
    per_stream: tuple = ()

    def __post_init__(self):
        if not (math.isfinite(self.value) and self.value > 0):
            raise ValueError(f"information number must be positive and finite, got {self.value}")
        if self.psi_exponent < 1:
            raise ValueError("psi exponent must be >= 1")

    def psi(self, n):
        return np.power(n, self.psi_exponent)

    def Psi(self, x):
        """Inverse of :meth:`psi`."""
        return np.power(x, 1.0 / self.psi_exponent)


def _check_stable(coefs: np.ndarray, what: str) -> None:
    if coefs.size == 0:
        return
    if np.max(np.abs(np.linalg.eigvals(companion(coefs)))) >= 1.0:
        raise ValueError(f"{what}: AR coefficients {coefs.tolist()} are not stable")


def companion(theta) -> np.ndarray:
    """Companion matrix of an AR(p) coefficient vector."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    p = theta.shape[0]
    lam = np.zeros((p, p))
    lam[0, :] = theta
    if p > 1:
        lam[1:, :-1] = np.eye(p - 1)
    return lam


def stationary_covariance(theta, tol: float = 1e-12, max_terms: int = 10 ** 6) -> np.ndarray:
    """Stationary covariance ``F = sum_n L^n B (L^T)^n`` of the AR state vector.

    ``B`` has a single unit entry in the top-left corner. The series is
    truncated once the Frobenius norm of the increment drops below ``tol``.
    """
    lam = companion(theta)
    p = lam.shape[0]
    if np.max(np.abs(np.linalg.eigvals(lam))) >= 1.0:
        raise ValueError("unstable AR coefficients; stationary covariance does not exist")
    term = np.zeros((p, p))
    term[0, 0] = 1.0
    F = term.copy()
    for _ in range(max_terms):
        term = lam @ term @ lam.T
        F += term
        if np.linalg.norm(term) < tol:
            return F
    raise RuntimeError("stationary covariance series did not converge")


class GaussianMeanShiftModel:
    """Mean shift ``X_n(i) = theta_i S_n(i) 1{n > nu} + xi_n(i)`` in AR(p) Gaussian noise.

    Parameters
    ----------
    profiles : PowerLawProfile or sequence of them
        Signal profile per stream (one profile is shared by all streams).
    sigma : float or array (N,)
        Std of the AR driving noise.
    rho : array (N, p) or (p,), optional
        AR coefficients of the noise. Empty means i.i.d. noise.
    n_streams : int, optional
        Required when every other argument is a scalar.
    anchor : {"absolute", "change"}
        ``"absolute"`` evaluates the profile at observation time ``n``;
        ``"change"`` evaluates it at the signal age ``n - nu``.
    """

    kind = "mean_shift"

    def __init__(self, profiles, sigma, rho=None, n_streams: int | None = None, anchor: str = "absolute"):
        prof_list = [profiles] if isinstance(profiles, PowerLawProfile) else list(profiles)
        sig = np.atleast_1d(np.asarray(sigma, dtype=float))
        rho_m = np.zeros((1, 0)) if rho is None or np.size(rho) == 0 else np.asarray(rho, dtype=float)
        if rho_m.ndim == 1:
            rho_m = rho_m[None, :]
        N = n_streams or max(len(prof_list), sig.size, rho_m.shape[0])
        if len(prof_list) == 1:
            prof_list = prof_list * N
        if sig.size == 1:
            sig = np.full(N, sig[0])
        if rho_m.shape[0] == 1:
            rho_m = np.tile(rho_m, (N, 1))
        if len(prof_list) != N or sig.size != N or rho_m.shape[0] != N:
            raise ValueError("profiles / sigma / rho do not match the number of streams")
        if np.any(sig <= 0):
            raise ValueError("sigma must be > 0")
        for i in range(N):
            _check_stable(rho_m[i], f"stream {i}")
        if anchor not in ("absolute", "change"):
            raise ValueError("anchor must be 'absolute' or 'change'")
        self.n_streams = N
        self.profiles = tuple(prof_list)
        self.sigma = sig
        self.rho = rho_m
        self.p = rho_m.shape[1]
        self.anchor = anchor

    # -- signal bookkeeping -------------------------------------------------
    def signal(self, stream: int, t, k: int | None = None):
        """Profile value entering ``X_t`` under a change at ``k`` (zero if ``t <= k``)."""
        t = np.asarray(t, dtype=float)
        if k is None:
            return self.profiles[stream](t)
        base = t - k if self.anchor == "change" else t
        return np.where(t > k, self.profiles[stream](base), 0.0)

    def signal_residual(self, stream: int, t: int, k: int | None = None) -> float:
        """``S~_t``: profile minus its AR prediction. ``k`` masks pre-change terms."""
        if not 0 <= stream < self.n_streams:
            raise IndexError(f"stream index {stream} out of range")
        q = min(self.p, t)
        lags = np.arange(t, t - q - 1, -1)
        s = self.signal(stream, lags, k)
        return float(s[0] - np.dot(self.rho[stream, :q], s[1:]))

    def info_profile_residual(self, stream: int) -> float:
        """Asymptotic ratio ``S~_t / S_t`` for power-law profiles."""
        return 1.0 - float(np.sum(self.rho[stream]))

    # -- LLR -----------------------------------------------------------------
    def llr_block(self, history: StreamHistory, t: int, ks: np.ndarray, grid: np.ndarray) -> np.ndarray:
        """LLR increments at time ``t`` for candidate change points ``ks``.

        Returns an array ``(len(ks), N, G)``; ``grid`` is ``(G, N)``.
        """
        xt = history.current() if t == history.n else np.array([history.value(i, t) for i in range(self.n_streams)])
        lags = history.lags(t, self.p)
        xres = xt - np.einsum("ij,ij->i", self.rho, lags) if self.p else xt
        sres = self._signal_residual_block(t, np.asarray(ks))
        inv = 1.0 / self.sigma ** 2
        a = (sres * xres[None, :] * inv)[:, :, None] * grid.T[None, :, :]
        b = (0.5 * sres ** 2 * inv)[:, :, None] * grid.T[None, :, :] ** 2
        return a - b

    def _signal_residual_block(self, t: int, ks: np.ndarray) -> np.ndarray:
        out = np.empty((ks.shape[0], self.n_streams))
        for i in range(self.n_streams):
            q = min(self.p, t)
            lags = np.arange(t, t - q - 1, -1, dtype=float)
            tt = lags[None, :]
            kk = ks[:, None].astype(float)
            base = tt - kk if self.anchor == "change" else np.broadcast_to(tt, (ks.shape[0], q + 1))
            s = np.where(tt > kk, self.profiles[i](base), 0.0)
            out[:, i] = s[:, 0] - s[:, 1:] @ self.rho[i, :q] if q else s[:, 0]
        return out

    def path_residuals(self, X: np.ndarray) -> np.ndarray:
        """AR-whitened observations ``X~`` for a full path ``(N, n)``."""
        X = np.asarray(X, dtype=float)
        out = X.copy()
        for j in range(1, self.p + 1):
            out[:, j:] -= self.rho[:, j - 1:j] * X[:, :-j]
        return out

    # -- theory --------------------------------------------------------------
    def information_number(self, streams: Sequence[int], theta) -> InfoNumber:
        th = np.broadcast_to(np.asarray(theta, dtype=float), (self.n_streams,)) if np.ndim(theta) == 0 \
            else np.asarray(theta, dtype=float)
        exps = {self.profiles[i].psi_exponent for i in streams}
        if len(exps) != 1:
            raise ValueError("streams in B have different growth exponents")
        per = []
        for i in streams:
            Q = self.profiles[i].Q * self.info_profile_residual(i) ** 2
            per.append(float(th[i] ** 2 * Q / (2.0 * self.sigma[i] ** 2)))
        return InfoNumber(float(sum(per)), exps.pop(), tuple(per))

    # -- simulation ----------------------------------------------------------
    def simulate_path(self, nu, affected, theta, horizon: int, seed=None) -> np.ndarray:
        """Simulate an ``(N, horizon)`` path with a change after time ``nu``."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        nu, affected = _check_change(nu, affected, horizon)
        th = np.broadcast_to(np.asarray(theta, dtype=float), (self.n_streams,)) if np.ndim(theta) == 0 \
            else np.asarray(theta, dtype=float)
        xi = rng.standard_normal((self.n_streams, horizon)) * self.sigma[:, None]
        for t in range(1, horizon):
            for j in range(1, min(self.p, t) + 1):
                xi[:, t] += self.rho[:, j - 1] * xi[:, t - j]
        X = xi
        if math.isfinite(nu):
            t = np.arange(1, horizon + 1)
            for i in affected:
                X[i] += th[i] * self.signal(i, t, int(nu))
        return X


class ARCoefChangeModel:
    """Change of the AR(p) coefficient vector from ``theta_star`` to ``theta``, unit noise."""

    kind = "ar_coef"

    def __init__(self, theta_star, n_streams: int | None = None):
        ts = np.atleast_2d(np.asarray(theta_star, dtype=float))
        if n_streams is not None and ts.shape[0] == 1:
            ts = np.tile(ts, (n_streams, 1))
        for i, row in enumerate(ts):
            _check_stable(row, f"stream {i} pre-change")
        self.theta_star = ts
        self.n_streams, self.p = ts.shape
        self.sigma = np.ones(self.n_streams)

    def check_post(self, theta_i) -> np.ndarray:
        th = np.atleast_1d(np.asarray(theta_i, dtype=float))
        if th.shape[0] != self.p:
            raise ValueError(f"parameter dimension {th.shape[0]} != p={self.p}")
        _check_stable(th, "post-change")
        return th

    def llr_block(self, history: StreamHistory, t: int, ks: np.ndarray, grid: np.ndarray) -> np.ndarray:
        """``grid`` is ``(G, N, p)`` (or ``(G, p)`` shared); returns ``(len(ks), N, G)``."""
        g = np.asarray(grid, dtype=float)
        if g.ndim == 2:
            g = np.broadcast_to(g[:, None, :], (g.shape[0], self.n_streams, self.p))
        lags = history.lags(t, self.p)
        xt = history.current() if t == history.n else np.array([history.value(i, t) for i in range(self.n_streams)])
        pred_post = np.einsum("gip,ip->ig", g, lags)
        pred_pre = np.einsum("ip,ip->i", self.theta_star, lags)[:, None]
        inc = xt[:, None] * (pred_post - pred_pre) + 0.5 * (pred_pre ** 2 - pred_post ** 2)
        return np.broadcast_to(inc[None], (len(ks),) + inc.shape).copy()

    def information_number(self, streams: Sequence[int], theta) -> InfoNumber:
        th = np.asarray(theta, dtype=float)
        th = np.tile(th, (self.n_streams, 1)) if th.ndim == 1 else th
        per = []
        for i in streams:
            post = self.check_post(th[i])
            d = post - self.theta_star[i]
            per.append(0.5 * float(d @ stationary_covariance(post) @ d))
        return InfoNumber(float(sum(per)), 1.0, tuple(per))

    def simulate_path(self, nu, affected, theta, horizon: int, seed=None) -> np.ndarray:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        nu, affected = _check_change(nu, affected, horizon)
        th = np.asarray(theta, dtype=float)
        th = np.tile(th, (self.n_streams, 1)) if th.ndim == 1 else th
        coefs_post = self.theta_star.copy()
        for i in affected:
            coefs_post[i] = self.check_post(th[i])
        w = rng.standard_normal((self.n_streams, horizon))
        X = np.zeros((self.n_streams, horizon))
        for t in range(horizon):
            c = coefs_post if t + 1 > nu else self.theta_star
            acc = w[:, t].copy()
            for j in range(1, min(self.p, t) + 1):
                acc += c[:, j - 1] * X[:, t - j]
            X[:, t] = acc
        return X


def _check_change(nu, affected, horizon):
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if nu is None:
        nu = INF
    affected = tuple(sorted(set(int(i) for i in (affected or ()))))
    if math.isfinite(nu):
        if nu < -1:
            raise ValueError("nu must be >= -1 or infinite")
        if not affected:
            raise ValueError("affected set must be nonempty when the change point is finite")
        nu = max(int(nu), 0)
    return nu, affected


# --- stand-alone operation wrappers -------------------------------------------

def residual(model: GaussianMeanShiftModel, stream: int, t: int, history: StreamHistory, k: int | None = None):
    """Return ``(S~_t, X~_t)`` for one stream."""
    if t < 1:
        raise ValueError("t must be >= 1")
    if t > history.n:
        raise IndexError(f"t={t} exceeds history length n={history.n}")
    q = min(model.p, t)
    x = history.value(stream, t) - sum(model.rho[stream, j - 1] * history.value(stream, t - j) for j in range(1, q + 1))
    return model.signal_residual(stream, t, k), x


def llr_increment(model: GaussianMeanShiftModel, stream: int, theta_i: float, t: int,
                  history: StreamHistory, k: int | None = None) -> float:
    """Per-observation LLR ``(theta/sigma^2) S~ X~ - theta^2 S~^2 / (2 sigma^2)``."""
    s, x = residual(model, stream, t, history, k)
    if not math.isfinite(x):
        raise ValueError("non-finite observation")
    var = model.sigma[stream] ** 2
    return theta_i * s * x / var - theta_i ** 2 * s * s / (2.0 * var)


def llr_increment_ar(model: ARCoefChangeModel, stream: int, theta_i, t: int, history: StreamHistory) -> float:
    """Per-observation LLR of the AR coefficient change."""
    th = np.atleast_1d(np.asarray(theta_i, dtype=float))
    if th.shape[0] != model.p:
        raise ValueError(f"parameter dimension {th.shape[0]} != p={model.p}")
    if t < 1:
        raise ValueError("t must be >= 1")
    lags = np.array([history.value(stream, t - j) for j in range(1, model.p + 1)])
    x = history.value(stream, t)
    pre = float(model.theta_star[stream] @ lags)
    post = float(th @ lags)
    return x * (post - pre) + 0.5 * (pre ** 2 - post ** 2)


def information_number(model, streams, theta) -> InfoNumber:
    return model.information_number(streams, theta)


def simulate_path(model, nu, affected, theta, horizon: int, seed=None) -> np.ndarray:
    return model.simulate_path(nu, affected, theta, horizon, seed)

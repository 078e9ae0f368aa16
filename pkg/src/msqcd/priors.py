"""Mixing layers: change-point prior, stream-pattern prior and parameter mixing measure."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np


class ChangePointPrior:
    """Prior of the change point ``nu`` on ``{-1, 0, 1, ...}``.

    ``-1`` collects every change that happened before the first observation.
    Use :meth:`geometric` or :meth:`table` to build one.
    """

    def __init__(self, kind: str, rho: float | None = None, masses: dict | None = None,
                 pi_minus1: float = 0.0):
        if not 0.0 <= pi_minus1 < 1.0:
            raise ValueError("pi_minus1 must lie in [0, 1)")
        self.kind = kind
        self.pi_minus1 = float(pi_minus1)
        if kind == "geometric":
            if rho is None or not 0.0 < rho < 1.0:
                raise ValueError("geometric prior needs rho in (0, 1)")
            self.rho = float(rho)
        elif kind == "table":
            if not masses:
                raise ValueError("explicit table needs at least one mass")
            tab = {int(k): float(v) for k, v in masses.items()}
            if min(tab) < -1 or min(tab.values()) < 0:
                raise ValueError("table keys must be >= -1 and masses >= 0")
            if -1 in tab:
                self.pi_minus1 = tab.pop(-1)
            total = self.pi_minus1 + sum(tab.values())
            if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-12):
                raise ValueError(f"prior masses sum to {total}, not 1")
            self._keys = np.array(sorted(tab))
            self._masses = np.array([tab[k] for k in self._keys])
        else:
            raise ValueError(f"unknown prior kind {kind!r}")

    @classmethod
    def geometric(cls, rho: float, pi_minus1: float = 0.0) -> "ChangePointPrior":
        return cls("geometric", rho=rho, pi_minus1=pi_minus1)

    @classmethod
    def table(cls, masses: dict) -> "ChangePointPrior":
        return cls("table", masses=masses)

    def mass(self, k: int) -> float:
        if k < -1:
            return 0.0
        if k == -1:
            return self.pi_minus1
        if self.kind == "geometric":
            return (1.0 - self.pi_minus1) * self.rho * (1.0 - self.rho) ** k
        idx = np.searchsorted(self._keys, k)
        return float(self._masses[idx]) if idx < self._keys.size and self._keys[idx] == k else 0.0

    def tail(self, ell: int) -> float:
        """``P(nu > ell)``."""
        if ell < -1:
            return 1.0
        if self.kind == "geometric":
            return (1.0 - self.pi_minus1) * (1.0 - self.rho) ** (ell + 1)
        return float(self._masses[self._keys > ell].sum())

    @property
    def mean(self) -> float:
        """``nu_bar = sum_{k>=1} k pi_k``."""
        if self.kind == "geometric":
            return (1.0 - self.pi_minus1) * (1.0 - self.rho) / self.rho
        pos = self._keys > 0
        return float(np.dot(self._keys[pos], self._masses[pos]))

    @property
    def b(self) -> float:
        """``b = sum_{k>=1} pi_k`` (weight of the head-start in the false-alarm bound)."""
        return self.tail(0)

    def sample(self, rng: np.random.Generator, size=None):
        """Draw change points; ``-1`` marks a change before the first observation."""
        shape = () if size is None else size
        u = rng.random(shape)
        if self.kind == "geometric":
            v = rng.random(shape)
            k = np.floor(np.log(v) / math.log1p(-self.rho)).astype(np.int64)
            out = np.where(u < self.pi_minus1, -1, k)
        else:
            keys = np.concatenate([[-1], self._keys])
            cdf = np.cumsum(np.concatenate([[self.pi_minus1], self._masses]))
            out = keys[np.minimum(np.searchsorted(cdf, u, side="right"), keys.size - 1)]
        return int(out) if size is None else out

    def to_dict(self) -> dict:
        if self.kind == "geometric":
            return {"kind": "geometric", "rho": self.rho, "pi_minus1": self.pi_minus1}
        tab = {int(k): float(m) for k, m in zip(self._keys, self._masses)}
        if self.pi_minus1:
            tab[-1] = self.pi_minus1
        return {"kind": "table", "masses": tab}


def prior_mass(prior: ChangePointPrior, k: int) -> float:
    return prior.mass(k)


def prior_tail(prior: ChangePointPrior, ell: int) -> float:
    return prior.tail(ell)


def prior_mean(prior: ChangePointPrior) -> float:
    return prior.mean


def elementary_symmetric(values, K: int | None = None) -> np.ndarray:
    """Elementary symmetric polynomials ``e_0..e_K`` of ``values`` (O(N K) recurrence)."""
    v = np.asarray(values, dtype=float)
    K = v.size if K is None else K
    e = np.zeros(K + 1)
    e[0] = 1.0
    for x in v:
        e[1:] = e[1:] + x * e[:-1]
    return e


def log_elementary_symmetric(log_values: np.ndarray, K: int) -> np.ndarray:
    """``log e_1..log e_K`` along the last axis of ``log_values``, computed in log space."""
    lv = np.asarray(log_values, dtype=float)
    shape = lv.shape[:-1]
    le = np.full(shape + (K + 1,), -np.inf)
    le[..., 0] = 0.0
    for i in range(lv.shape[-1]):
        term = lv[..., i:i + 1] + le[..., :-1]
        le[..., 1:] = np.logaddexp(le[..., 1:], term)
    return le[..., 1:]


class PatternPrior:
    """Product-form prior over affected subsets ``B`` with ``1 <= |B| <= K``.

    ``p_B = C * prod_{i in B} p_i`` with ``C = 1 / (e_1 + ... + e_K)``.
    """

    def __init__(self, weights, K: int | None = None):
        p = np.asarray(weights, dtype=float).reshape(-1)
        if p.size < 1 or np.any(p < 0) or not np.any(p > 0):
            raise ValueError("stream weights must be >= 0 with at least one positive")
        self.weights = p
        self.N = p.size
        self.K = self.N if K is None else int(K)
        if not 1 <= self.K <= self.N:
            raise ValueError(f"K must lie in [1, {self.N}]")
        e = elementary_symmetric(p, self.K)
        self.normalizer = 1.0 / float(e[1:].sum())

    @classmethod
    def uniform(cls, n_streams: int, p: float, K: int | None = None) -> "PatternPrior":
        return cls(np.full(n_streams, p), K)

    @classmethod
    def from_affect_probability(cls, n_streams: int, q: float) -> "PatternPrior":
        """Prior matching independent per-stream change with probability ``q`` (K = N)."""
        return cls.uniform(n_streams, q / (1.0 - q))

    @property
    def log_normalizer(self) -> float:
        return math.log(self.normalizer)

    @property
    def equal_full(self) -> bool:
        return self.K == self.N

    def weight(self, B) -> float:
        B = tuple(B)
        if not 1 <= len(B) <= self.K:
            raise ValueError(f"|B|={len(B)} outside [1, {self.K}]")
        return self.normalizer * float(np.prod(self.weights[list(B)]))

    def patterns(self):
        """Enumerate ``(B, p_B)`` over every admissible pattern."""
        for size in range(1, self.K + 1):
            for B in itertools.combinations(range(self.N), size):
                yield B, self.weight(B)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "K": self.K}


def pattern_weight(prior: PatternPrior, B) -> float:
    return prior.weight(B)


@dataclass
class ParameterMixing:
    """Discrete mixing measure over post-change parameters.

    ``points`` is ``(G,)`` for a parameter shared by all streams, ``(G, N)`` for
    per-stream scalars, or ``(G, N, p)`` for vector parameters.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.points.ndim == 0:
            self.points = self.points.reshape(1)
        if self.weights.size != self.points.shape[0] or np.any(self.weights <= 0):
            raise ValueError("need one positive weight per grid point")
        self.weights = self.weights / self.weights.sum()

    @classmethod
    def uniform_grid(cls, lo: float, hi: float, step: float) -> "ParameterMixing":
        n = int(round((hi - lo) / step)) + 1
        pts = np.round(lo + step * np.arange(n), 12)
        return cls(pts, np.full(n, 1.0 / n))

    @classmethod
    def degenerate(cls, theta) -> "ParameterMixing":
        return cls(np.asarray(theta, dtype=float)[None, ...], np.ones(1))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def stream_grid(self, n_streams: int) -> np.ndarray:
        """Grid broadcast to ``(G, N)`` (or ``(G, N, p)`` for vector parameters)."""
        if self.points.ndim == 1:
            return np.repeat(self.points[:, None], n_streams, axis=1)
        if self.points.shape[1] != n_streams:
            raise ValueError("per-stream grid does not match the number of streams")
        return self.points

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "weights": self.weights.tolist()}


def sample_change_point(prior: ChangePointPrior, rng: np.random.Generator) -> int:
    return prior.sample(rng)


def sample_pattern(q: float, n_streams: int, rng: np.random.Generator, nonempty: bool = False) -> tuple:
    """Affect each stream independently with probability ``q``.

    With ``nonempty=True`` the draw is repeated until at least one stream is hit.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    while True:
        hit = np.flatnonzero(rng.random(n_streams) < q)
        if hit.size or not nonempty:
            return tuple(int(i) for i in hit)

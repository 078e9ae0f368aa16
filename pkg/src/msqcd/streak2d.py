"""Streak detection in a single frame with directional finite-moving-average statistics.

A streak is a straight segment blurred by a Gaussian PSF. Each scanned
direction is a line through the search area; a window of ``L`` rows by ``K``
columns slides down it, and the statistic ``V(n)`` is the matched-filter sum
of the template times the pixels inside the window at step ``n``.

Pixel ``(i, j)`` is row ``i``, column ``j`` with its centre at ``x = j, y = i``.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erf

FRAME_MAGIC = b"MSQFRAME"
_HEADER = struct.Struct("<8sII")  # 16 bytes: magic, H, W


@dataclass
class Frame:
    data: np.ndarray
    sigma: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise ValueError("frame must be a 2-D array")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("frame contains non-finite values")
        if not self.sigma > 0:
            raise ValueError("noise sigma must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass
class StreakSpec:
    x0: float
    y0: float
    x1: float
    y1: float
    theta: float
    w_psf: float = 1.5

    def __post_init__(self):
        if self.length < 1.0:
            raise ValueError("streak must be at least one pixel long")
        if not self.theta > 0:
            raise ValueError("intensity must be positive")
        if not self.w_psf > 0:
            raise ValueError("PSF width must be positive")

    @property
    def length(self) -> float:
        return math.hypot(self.x1 - self.x0, self.y1 - self.y0)

    def check_inside(self, shape) -> None:
        H, W = shape
        for x, y in ((self.x0, self.y0), (self.x1, self.y1)):
            if not (0 <= x <= W - 1 and 0 <= y <= H - 1):
                raise ValueError(f"endpoint ({x}, {y}) outside a {H}x{W} frame")


@dataclass
class ScanConfig:
    """Direction set and window geometry.

    Directions are all pairs of ``n_angles`` angles spread over
    ``[-max_angle_deg, max_angle_deg]`` from vertical and integer column
    offsets ``-half_width .. half_width`` around ``center_x`` (frame centre when
    ``None``). Each line passes through ``(center_x + offset, H / 2)``.
    """

    n_angles: int = 21
    max_angle_deg: float = 10.0
    half_width: int = 4
    center_x: float | None = None
    L: int = 20
    K: int = 5
    w_psf: float = 1.5

    def __post_init__(self):
        if self.n_angles < 1 or self.L < 1 or self.K < 1 or self.half_width < 0:
            raise ValueError("n_angles, L, K must be >= 1 and half_width >= 0")


@dataclass
class Direction:
    index: int
    angle_deg: float
    x_ref: float
    y_ref: float

    def x_at(self, y):
        return self.x_ref + math.tan(math.radians(self.angle_deg)) * (np.asarray(y, dtype=float) - self.y_ref)


@dataclass
class DirectionScan:
    direction: Direction
    L: int
    K: int
    starts: np.ndarray  # top row of the window at each step
    V: np.ndarray


@dataclass
class StreakDetection:
    detected: bool
    direction: Direction | None = None
    stop_step: int | None = None
    start_row: float | None = None
    end_row: float | None = None
    start_xy: tuple | None = None
    end_xy: tuple | None = None
    peak: float | None = None
    threshold: float = math.nan

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.direction is not None:
            d["direction"] = asdict(self.direction)
        return d


# --- rendering ----------------------------------------------------------------------

def streak_profile(spec: StreakSpec, shape) -> np.ndarray:
    """Line integral of an isotropic Gaussian PSF along the segment, scaled to unit peak."""
    H, W = shape
    yy, xx = np.mgrid[0:H, 0:W].astype(float)
    ux, uy = (spec.x1 - spec.x0) / spec.length, (spec.y1 - spec.y0) / spec.length
    dx, dy = xx - spec.x0, yy - spec.y0
    along = dx * ux + dy * uy
    perp = dx * uy - dy * ux
    s2w = math.sqrt(2.0) * spec.w_psf
    S = np.exp(-perp ** 2 / (2 * spec.w_psf ** 2)) * 0.5 * (erf((spec.length - along) / s2w) + erf(along / s2w))
    return S / S.max()


def render_frame(spec: StreakSpec | None, shape, sigma: float, rng: np.random.Generator) -> Frame:
    """``X = theta S + N(0, sigma^2)``; ``spec=None`` gives a pure-noise frame."""
    H, W = shape
    noise = rng.standard_normal((H, W)) * sigma
    if spec is None:
        return Frame(noise, sigma)
    spec.check_inside(shape)
    return Frame(spec.theta * streak_profile(spec, shape) + noise, sigma)


# --- scanning -----------------------------------------------------------------------

def directions(config: ScanConfig, shape) -> list[Direction]:
    H, W = shape
    cx = (W - 1) / 2.0 if config.center_x is None else config.center_x
    angles = np.linspace(-config.max_angle_deg, config.max_angle_deg, config.n_angles) if config.n_angles > 1 \
        else np.zeros(1)
    out = []
    for off in range(-config.half_width, config.half_width + 1):
        for a in angles:
            out.append(Direction(len(out), float(a), cx + off, H / 2.0))
    return out


def direction_templates(dirs, config: ScanConfig, shape):
    """Per-direction column indices ``(D, H, K)`` and template weights ``(D, H, K)``."""
    H, W = shape
    if config.L > H:
        raise ValueError(f"window length {config.L} exceeds frame height {H}")
    rows = np.arange(H, dtype=float)
    cols = np.empty((len(dirs), H, config.K), dtype=np.int64)
    S = np.empty((len(dirs), H, config.K))
    for d, dr in enumerate(dirs):
        x = dr.x_at(rows)
        j0 = np.rint(x - (config.K - 1) / 2.0).astype(np.int64)
        c = j0[:, None] + np.arange(config.K)[None, :]
        if c.min() < 0 or c.max() >= W:
            raise ValueError(f"direction {d} leaves the frame; reduce the search area or window width")
        cols[d] = c
        perp = (c - x[:, None]) * math.cos(math.radians(dr.angle_deg))
        S[d] = np.exp(-perp ** 2 / (2 * config.w_psf ** 2))
    return cols, S


def _row_sums(data, cols, S):
    H = data.shape[0]
    return np.einsum("dhk,dhk->dh", S, data[np.arange(H)[None, :, None], cols])


def fma_scan(frame: Frame, config: ScanConfig, dirs=None, templates=None) -> list[DirectionScan]:
    """Sliding-window statistic for every direction.

    Row contributions ``c_y = sum_j S_{y,j} X_{y,j}`` are computed once per
    direction, then ``V(n) = V(n-1) + c_{n+L-1} - c_{n-1}``.
    """
    dirs = dirs if dirs is not None else directions(config, frame.shape)
    cols, S = templates if templates is not None else direction_templates(dirs, config, frame.shape)
    V = sliding_statistic(_row_sums(frame.data, cols, S), config.L)
    starts = np.arange(V.shape[1])
    return [DirectionScan(d, config.L, config.K, starts, V[i]) for i, d in enumerate(dirs)]


def sliding_statistic(c: np.ndarray, L: int) -> np.ndarray:
    """Window sums of ``L`` consecutive rows, with the add-leading/drop-trailing update."""
    D, H = c.shape
    n_steps = H - L + 1
    V = np.empty((D, n_steps))
    V[:, 0] = c[:, :L].sum(axis=1)
    for n in range(1, n_steps):
        V[:, n] = V[:, n - 1] + c[:, n + L - 1] - c[:, n - 1]
    return V


def direct_statistic(frame: Frame, config: ScanConfig, dirs=None) -> np.ndarray:
    """Recompute every ``V(n)`` from scratch as a sum over the window's pixels (test oracle)."""
    dirs = dirs if dirs is not None else directions(config, frame.shape)
    cols, S = direction_templates(dirs, config, frame.shape)
    H = frame.shape[0]
    out = np.empty((len(dirs), H - config.L + 1))
    for d in range(len(dirs)):
        for n in range(H - config.L + 1):
            acc = 0.0
            for y in range(n, n + config.L):
                for k in range(config.K):
                    acc += S[d, y, k] * frame.data[y, cols[d, y, k]]
            out[d, n] = acc
    return out


def template_energy(config: ScanConfig, shape, dirs=None) -> np.ndarray:
    """``sum S^2`` over each window placement, ``(D, n_steps)``."""
    dirs = dirs if dirs is not None else directions(config, shape)
    _, S = direction_templates(dirs, config, shape)
    return sliding_statistic((S ** 2).sum(axis=2), config.L)


# --- detection ----------------------------------------------------------------------

def _crossing(V, level, i, step):
    """Fractional index where ``V`` falls to ``level`` walking from ``i`` in direction ``step``."""
    j = i
    while 0 <= j + step < V.size and V[j + step] >= level:
        j += step
    nxt = j + step
    if not 0 <= nxt < V.size:
        return float(j)
    return j + step * (V[j] - level) / (V[j] - V[nxt])


def detect_streak(scans: list[DirectionScan], h: float) -> StreakDetection:
    """Multistream FMA stopping rule with half-peak endpoint localization.

    Stops at the first step where ``max_d V_d >= h``. The winning direction is
    the one whose trajectory has the largest peak; the streak ends are where
    its excursion around the peak crosses half the plateau level, shifted by
    half a window.
    """
    if not scans:
        raise ValueError("no scans")
    V = np.stack([s.V for s in scans])
    above = np.flatnonzero(V.max(axis=0) >= h)
    if above.size == 0:
        return StreakDetection(False, threshold=h)
    stop = int(above[0])
    d = int(np.argmax(V.max(axis=1)))
    v = V[d]
    i = int(np.argmax(v))
    # plateau level: median over the excursion above half the maximum
    lo, hi = _crossing(v, 0.5 * v[i], i, -1), _crossing(v, 0.5 * v[i], i, +1)
    core = v[int(math.ceil(lo)):int(math.floor(hi)) + 1]
    half = 0.5 * float(np.median(core)) if core.size else 0.5 * v[i]
    i = int(np.argmax(np.where(v >= half, v, -np.inf)))
    up, down = _crossing(v, half, i, -1), _crossing(v, half, i, +1)
    L = scans[d].L
    start_row = float(scans[d].starts[0] + up + L / 2.0 - 0.5)
    end_row = float(scans[d].starts[0] + down + L / 2.0 - 0.5)
    dr = scans[d].direction
    return StreakDetection(True, dr, stop, start_row, end_row, (float(dr.x_at(start_row)), start_row),
                           (float(dr.x_at(end_row)), end_row), float(v.max()), h)


def max_noise_statistic(shape, config: ScanConfig, sigma: float, n_frames: int, rng: np.random.Generator,
                        dirs=None) -> np.ndarray:
    """Per-frame ``max_{d,n} V`` over ``n_frames`` pure-noise frames."""
    dirs = dirs if dirs is not None else directions(config, shape)
    tmpl = direction_templates(dirs, config, shape)
    out = np.empty(n_frames)
    for f in range(n_frames):
        data = rng.standard_normal(shape) * sigma
        out[f] = sliding_statistic(_row_sums(data, *tmpl), config.L).max()
    return out


def calibrate_h(shape, config: ScanConfig, sigma: float, budget: float, n_frames: int,
                rng: np.random.Generator, dirs=None) -> float:
    """Smallest ``h`` whose empirical per-frame false-alarm frequency is ``<= budget``."""
    if n_frames < 10 ** 3:
        raise ValueError("calibration needs at least 10^3 noise frames")
    if not 0.0 < budget < 1.0:
        raise ValueError("false-alarm budget must lie in (0, 1)")
    m = np.sort(max_noise_statistic(shape, config, sigma, n_frames, rng, dirs))[::-1]
    c = int(math.floor(budget * n_frames + 1e-9))
    return float(np.nextafter(m[c], np.inf))


# --- I/O ------------------------------------------------------------------------------

def write_frame(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype="<f8")
    H, W = data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FRAME_MAGIC, H, W))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_frame(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError("frame file too short for header")
        magic, H, W = _HEADER.unpack(head)
        if magic != FRAME_MAGIC:
            raise ValueError(f"bad frame magic {magic!r}")
        body = fh.read()
    if len(body) != 8 * H * W:
        raise ValueError(f"frame body has {len(body)} bytes, expected {8 * H * W}")
    return np.frombuffer(body, dtype="<f8").reshape(H, W).copy()


def read_frame_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        data = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise ValueError(f"non-numeric entry in {path}: {exc}") from None
    if data.ndim != 2 or len({len(r) for r in rows}) != 1:
        raise ValueError("CSV frame rows have unequal lengths")
    return data


def estimate_sigma(data: np.ndarray) -> float:
    """Robust noise level from the median absolute deviation."""
    return float(1.4826 * np.median(np.abs(data - np.median(data))))


def write_report(path, detection: StreakDetection, extra: dict | None = None) -> None:
    d = detection.to_dict()
    if extra:
        d.update(extra)
    with open(path, "w") as fh:
        json.dump(d, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_trajectory(path, scan: DirectionScan) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "top_row", "V"])
        for n, (r, v) in enumerate(zip(scan.starts, scan.V)):
            w.writerow([n, int(r), repr(float(v))])

"""Differential entropy of smoothed stationary measures, and the annulus bound.

Everything is in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln

from . import streams
from .maps import as_point
from .parallel import map_chunks
from .sampler import SampleSet

LEFTOVER_LIMIT = 0.01
I_MAX_CAP = 64


def h(x):
    """``-x log x`` with ``h(0) = 0``."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0):
        raise ValueError("h is defined on [0, inf)")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(arr > 0, -arr * np.log(np.where(arr > 0, arr, 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def log_ball_volume(d: int, R: float) -> float:
    return 0.5 * d * math.log(math.pi) - float(gammaln(0.5 * d + 1.0)) + d * math.log(R)


def ball_volume(d: int, R: float) -> float:
    """Lebesgue volume of the Euclidean ``R``-ball in ``R^d``."""
    if d < 1 or not R > 0:
        raise ValueError("need d >= 1 and R > 0")
    return math.exp(log_ball_volume(d, R))


@dataclass(frozen=True)
class AnnulusDecomposition:
    """Shells ``L^i <= |y - center| < L^(i+1)`` for ``i = 0..i_max`` plus the
    unit ball (index ``-1``) and the leftover mass beyond ``L^(i_max+1)``."""

    L: float
    center: np.ndarray
    probs: np.ndarray
    volumes: np.ndarray
    leftover_mass: float

    @property
    def indices(self) -> np.ndarray:
        return np.arange(-1, len(self.probs) - 1)


@dataclass(frozen=True)
class AnnulusBound:
    value: float
    leftover_mass: float
    reliable: bool
    decomposition: AnnulusDecomposition
    value_without_unit_ball: float
    metadata: dict = field(default_factory=dict)


def _points(samples) -> np.ndarray:
    pts = samples.points if isinstance(samples, SampleSet) else np.asarray(samples, dtype=float)
    return pts[:, None] if pts.ndim == 1 else pts


def annulus_decomposition(samples, center, L: float, i_max: Optional[int] = None) -> AnnulusDecomposition:
    if not L > 1:
        raise ValueError("L must exceed 1")
    pts = _points(samples)
    if pts.shape[0] == 0:
        raise ValueError("empty sample set")
    d = pts.shape[1]
    r = np.linalg.norm(pts - as_point(center, d), axis=1)
    n = r.size
    # shell index: -1 inside the unit ball, else floor(log_L r)
    with np.errstate(divide="ignore"):
        idx = np.where(r < 1.0, -1, np.floor(np.log(np.maximum(r, 1.0)) / math.log(L))).astype(np.int64)
    # guard against rounding at shell edges
    idx = np.where((idx >= 0) & (r < L ** idx.astype(float)), idx - 1, idx)
    idx = np.where((idx >= -1) & (r >= L ** (idx + 1.0)), idx + 1, idx)
    if i_max is None:
        i_max = 0
        while i_max < I_MAX_CAP and np.count_nonzero(idx > i_max) / n >= 1e-4:
            i_max += 1
    counts = np.bincount(np.clip(idx, -1, i_max + 1) + 1, minlength=i_max + 3)
    probs = counts[: i_max + 2] / n
    leftover = counts[i_max + 2] / n
    vols = [ball_volume(d, 1.0)]
    for i in range(i_max + 1):
        # log-space difference avoids cancellation for large i
        lo, hi = log_ball_volume(d, L**i), log_ball_volume(d, L ** (i + 1))
        vols.append(math.exp(hi + math.log(-math.expm1(lo - hi))))
    return AnnulusDecomposition(float(L), as_point(center, d), probs, np.array(vols), float(leftover))


def annulus_bound(samples, center, L: float = 2.0, i_max: Optional[int] = None) -> AnnulusBound:
    """Upper bound ``sum_i h(p_i) + p_i log m_i`` on the differential entropy.

    The unit ball enters as shell ``-1``; the sum starting at shell 0 (which
    ignores the unit ball) is kept as ``value_without_unit_ball``.
    """
    dec = annulus_decomposition(samples, center, L, i_max)
    terms = h(dec.probs) + dec.probs * np.log(dec.volumes)
    value = math.fsum(terms)
    return AnnulusBound(value, dec.leftover_mass, dec.leftover_mass <= LEFTOVER_LIMIT, dec,
                        math.fsum(terms[1:]),
                        {"unit_ball_mass": float(dec.probs[0]), "i_max": len(dec.probs) - 2})


def smoothed_points(samples, sigma: float, seed: int) -> np.ndarray:
    """Each draw plus independent ``N(0, sigma^2 I)`` noise."""
    pts = _points(samples)
    m, d = pts.shape
    keys = streams.stream_keys(seed, np.arange(m, dtype=np.uint64))
    noise = np.stack([streams.normal(keys, j) for j in range(d)], axis=1)
    return pts + sigma * noise


def _log_mixture_density(y: np.ndarray, centres: np.ndarray, sigma: float,
                         block: int = 1 << 22) -> np.ndarray:
    """``log (1/N) sum_i phi_sigma(y - z_i)`` for each row of ``y``."""
    n, d = centres.shape
    # repeated centres collapse into one kernel carrying their multiplicity
    uniq, counts = np.unique(centres, axis=0, return_counts=True)
    log_w = np.log(counts)
    log_norm = -0.5 * d * math.log(2 * math.pi * sigma * sigma) - math.log(n)
    k = uniq.shape[0]
    rows = max(1, block // k)
    out = np.empty(y.shape[0])
    for lo in range(0, y.shape[0], rows):
        yy = y[lo:lo + rows]
        if d == 1:
            sq = (yy[:, 0:1] - uniq[None, :, 0]) ** 2
        else:
            sq = np.sum((yy[:, None, :] - uniq[None, :, :]) ** 2, axis=2)
        a = log_w[None, :] - sq / (2 * sigma * sigma)
        top = a.max(axis=1)
        out[lo:lo + rows] = top + np.log(np.exp(a - top[:, None]).sum(axis=1)) + log_norm
    return out


def smoothed_entropy(samples, sigma: float, eval_count: int, seed: int,
                     threads: Optional[int] = None, min_samples: int = 1000) -> tuple:
    """Monte Carlo entropy of the empirical measure convolved with ``N(0, sigma^2 I)``.

    Evaluation points are drawn from that same Gaussian mixture, so the
    estimate ``-mean log f(y)`` is unbiased for the mixture's entropy.
    Returns ``(H_hat, stderr)``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    pts = _points(samples)
    n, d = pts.shape
    if n < min_samples:
        raise ValueError(f"smoothed_entropy needs at least {min_samples} samples, got {n}")

    def block(lo, hi):
        keys = streams.stream_keys(seed, np.arange(lo, hi, dtype=np.uint64))
        pick = np.minimum((streams.uniform(keys, 0) * n).astype(np.int64), n - 1)
        xi = np.stack([streams.normal(keys, 1 + j) for j in range(d)], axis=1)
        y = pts[pick] + sigma * xi
        return -_log_mixture_density(y, pts, sigma)

    vals = np.concatenate(map_chunks(block, eval_count, chunk=1 << 14, threads=threads))
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(eval_count))

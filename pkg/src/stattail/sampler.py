"""Sampling the stationary measure by backward iteration.

A draw follows one random word ``g_1 g_2 ... g_n`` applied to a start point
``x``.  New maps are appended on the inside, so the composed word converges
almost surely and its limit is distributed according to the stationary
measure.  Iteration stops once

    r_n * A_x / (1 - lam)  <=  tol,

where ``r_n`` is the running product of Lipschitz constants, ``A_x`` the
largest one-step displacement of ``x`` and ``lam = exp(chi / 2)`` a stand-in
for the (unobservable) eventual per-step contraction.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import streams
from .maps import PiecewiseLinear1D, apply, as_point
from .measure import (GeneratingMeasure, SquareSpikeSequence, atom_cdf, contraction_rate,
                      sample_atom_indices)
from .parallel import map_chunks

DEFAULT_TRUNCATION_CEILING = 1e-3


class NonContracting(ValueError):
    """The measure is not contracting on average (chi >= 0)."""


@dataclass(frozen=True)
class StationaryDraw:
    point: np.ndarray
    steps_used: int
    residual_bound: float
    truncated: bool


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Columnar batch of stationary draws plus provenance.

    ``points`` has shape (count, d); the other columns have shape (count,).
    """

    points: np.ndarray
    steps_used: np.ndarray
    residual_bound: np.ndarray
    truncated: np.ndarray
    measure_id: str
    seed: int
    tolerance: float
    start_point: np.ndarray
    max_n: int = 0
    truncation_ceiling: float = DEFAULT_TRUNCATION_CEILING
    truncation_mass: float = 0.0
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def truncated_fraction(self) -> float:
        return float(np.mean(self.truncated)) if len(self) else 0.0

    @property
    def valid(self) -> bool:
        return self.truncated_fraction <= self.truncation_ceiling

    @property
    def draws(self) -> Iterator[StationaryDraw]:
        for i in range(len(self)):
            yield StationaryDraw(self.points[i].copy(), int(self.steps_used[i]),
                                 float(self.residual_bound[i]), bool(self.truncated[i]))

    def to_csv(self) -> str:
        d = self.dim
        header = ",".join(["index"] + [f"coord_{j}" for j in range(d)]
                          + ["steps_used", "residual_bound", "truncated"])
        buf = io.StringIO()
        buf.write(header + "\n")
        if len(self):
            table = np.column_stack([np.arange(len(self)), self.points, self.steps_used,
                                     self.residual_bound, self.truncated.astype(int)])
            fmt = ["%d"] + ["%.17g"] * d + ["%d", "%.17g", "%d"]
            np.savetxt(buf, table, fmt=fmt, delimiter=",", newline="\n")
        return buf.getvalue()


def read_samples_csv(text: str) -> dict:
    """Parse the sample CSV back into columns (used by tools and tests)."""
    lines = text.splitlines()
    header = lines[0].split(",")
    d = sum(1 for h in header if h.startswith("coord_"))
    if len(lines) == 1:
        data = np.empty((0, len(header)))
    else:
        data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    return {
        "index": data[:, 0].astype(int),
        "points": data[:, 1:1 + d],
        "steps_used": data[:, 1 + d].astype(int),
        "residual_bound": data[:, 2 + d],
        "truncated": data[:, 3 + d].astype(bool),
    }


def displacement_bound(mu: GeneratingMeasure, x) -> float:
    """``sup_g |g(x) - x|`` over the support of ``mu``."""
    p = as_point(x, mu.dim)
    if mu.is_affine:
        A, b = mu.linear_parts(), mu.translations()
        moved = np.einsum("kij,j->ki", A, p) + b
        return float(np.max(np.linalg.norm(moved - p, axis=1)))
    disp = max(float(np.linalg.norm(apply(g, p) - p)) for g in mu.maps)
    if isinstance(mu.tail, SquareSpikeSequence):
        # every map beyond the truncation index sends x <= n to 0
        if p[0] <= mu.tail.truncation + 1:
            disp = max(disp, abs(float(p[0])))
        else:
            raise ValueError("start point beyond the truncation index of the sequence preset")
    return disp


def default_max_n(chi: float, tol: float) -> int:
    return max(1, math.ceil(40.0 * math.log(1.0 / tol) / abs(chi)))


def _stop_threshold(mu: GeneratingMeasure, x: np.ndarray, tol: float):
    chi = contraction_rate(mu)
    if not chi < 0:
        raise NonContracting(f"contraction rate {chi:.6g} is not negative")
    lam = math.exp(chi / 2.0)
    a_x = displacement_bound(mu, x)
    log_factor = (math.log(a_x) if a_x > 0 else -math.inf) - math.log1p(-lam)
    return chi, log_factor


def _backward_affine(mu, x, tol, max_n, keys, ctr0, log_factor):
    """Vectorised backward iteration for affine measures over a block of streams."""
    m = keys.shape[0]
    d = mu.dim
    A, b = mu.linear_parts(), mu.translations()
    cdf = atom_cdf(mu.sampling_weights())
    log_rho = mu.log_rhos()
    log_tol = math.log(tol)

    points = np.empty((m, d))
    steps = np.zeros(m, dtype=np.int64)
    log_r_out = np.zeros(m)
    truncated = np.zeros(m, dtype=bool)

    ids = np.arange(m)
    M = np.broadcast_to(np.eye(d), (m, d, d)).copy()
    c = np.zeros((m, d))
    log_r = np.zeros(m)

    def finish(sel, n):
        done = ids[sel]
        points[done] = np.einsum("nij,j->ni", M[sel], x) + c[sel]
        steps[done] = n
        log_r_out[done] = log_r[sel]

    stop = log_r + log_factor <= log_tol
    if stop.any():
        finish(stop, 0)
        keep = ~stop
        ids, M, c, log_r = ids[keep], M[keep], c[keep], log_r[keep]

    n = 0
    while ids.size and n < max_n:
        idx = sample_atom_indices(cdf, keys[ids], ctr0 + n)
        n += 1
        if d == 1:
            c = c + M[:, :, 0] * b[idx]
            M = M * A[idx]
        else:
            c = c + np.einsum("nij,nj->ni", M, b[idx])
            M = np.einsum("nij,njk->nik", M, A[idx])
        log_r = log_r + log_rho[idx]
        stop = log_r + log_factor <= log_tol
        if stop.any():
            finish(stop, n)
            keep = ~stop
            ids, M, c, log_r = ids[keep], M[keep], c[keep], log_r[keep]
    if ids.size:
        finish(np.ones(ids.size, dtype=bool), n)
        truncated[ids] = True
    with np.errstate(over="ignore"):
        residual = np.exp(log_r_out + log_factor)
    return points, steps, residual, truncated


def _backward_word(maps, cdf, log_rho, x, tol, max_n, key, ctr0, log_factor):
    """Backward iteration for measures with piecewise atoms.

    The word is stored and applied right to left.  The stop rule only reads
    the running Lipschitz product, so the word is evaluated once, at the end.
    """
    log_tol = math.log(tol)
    word = []
    log_r = 0.0
    n = 0
    while log_r + log_factor > log_tol and n < max_n:
        i = int(sample_atom_indices(cdf, key, ctr0 + n)[0])
        word.append(i)
        n += 1
        log_r += float(log_rho[i])
    y = x.copy()
    for j in reversed(word):
        y = apply(maps[j], y)
    truncated = log_r + log_factor > log_tol
    with np.errstate(over="ignore"):
        residual = math.exp(min(log_r + log_factor, 700.0))
    return y, n, residual, truncated


def _run_block(mu, x, tol, max_n, keys, ctr0, log_factor):
    if mu.is_affine:
        return _backward_affine(mu, x, tol, max_n, keys, ctr0, log_factor)
    m = keys.shape[0]
    if log_factor == -math.inf:
        # A_x = 0: every atom fixes x, so the zero-length word is exact
        return (np.broadcast_to(x, (m, mu.dim)).copy(), np.zeros(m, dtype=np.int64),
                np.zeros(m), np.zeros(m, dtype=bool))
    maps, cdf, log_rho = mu.maps, atom_cdf(mu.sampling_weights()), mu.log_rhos()
    out = [_backward_word(maps, cdf, log_rho, x, tol, max_n, keys[i:i + 1], ctr0, log_factor)
           for i in range(m)]
    pts = np.array([o[0] for o in out]).reshape(m, mu.dim)
    return (pts, np.array([o[1] for o in out], dtype=np.int64),
            np.array([o[2] for o in out]), np.array([o[3] for o in out], dtype=bool))


def backward_sample(mu: GeneratingMeasure, x, tol: float, max_n: Optional[int],
                    rng_stream: streams.Stream) -> StationaryDraw:
    """One draw from the stationary measure, consuming ``rng_stream``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    p = as_point(x, mu.dim)
    chi, log_factor = _stop_threshold(mu, p, tol)
    max_n = default_max_n(chi, tol) if max_n is None else int(max_n)
    keys = stream_key(rng_stream)
    pts, steps, resid, trunc = _run_block(mu, p, tol, max_n, keys, rng_stream.counter, log_factor)
    rng_stream.counter += int(steps[0])
    return StationaryDraw(pts[0], int(steps[0]), float(resid[0]), bool(trunc[0]))


def stream_key(rng_stream: streams.Stream) -> np.ndarray:
    return rng_stream.key


def sample_batch(mu: GeneratingMeasure, x, tol: float, count: int, max_n: Optional[int] = None,
                 seed: int = 0, threads: Optional[int] = None,
                 truncation_ceiling: float = DEFAULT_TRUNCATION_CEILING) -> SampleSet:
    """``count`` independent draws; draw ``i`` uses the stream ``(seed, i)``."""
    if count < 0:
        raise ValueError("count must be non-negative")
    if not tol > 0:
        raise ValueError("tol must be positive")
    p = as_point(x, mu.dim)
    chi, log_factor = _stop_threshold(mu, p, tol)
    max_n = default_max_n(chi, tol) if max_n is None else int(max_n)

    def block(lo, hi):
        keys = streams.stream_keys(seed, np.arange(lo, hi, dtype=np.uint64))
        return _run_block(mu, p, tol, max_n, keys, 0, log_factor)

    parts = map_chunks(block, count, threads=threads)
    if parts:
        pts = np.concatenate([q[0] for q in parts])
        steps = np.concatenate([q[1] for q in parts])
        resid = np.concatenate([q[2] for q in parts])
        trunc = np.concatenate([q[3] for q in parts])
    else:
        pts, steps = np.empty((0, mu.dim)), np.empty(0, dtype=np.int64)
        resid, trunc = np.empty(0), np.empty(0, dtype=bool)
    return SampleSet(pts, steps, resid, trunc, mu.content_hash(), int(seed), float(tol), p,
                     max_n, truncation_ceiling, mu.truncation_mass())


def forward_orbit(mu: GeneratingMeasure, x, n: int, rng_stream: streams.Stream) -> np.ndarray:
    """``g_n o ... o g_1 (x)`` by successive application."""
    if n < 0:
        raise ValueError("n must be non-negative")
    y = as_point(x, mu.dim).copy()
    maps = mu.maps
    cdf = atom_cdf(mu.sampling_weights())
    key = stream_key(rng_stream)
    for _ in range(n):
        i = int(sample_atom_indices(cdf, key, rng_stream.counter)[0])
        rng_stream.counter += 1
        y = apply(maps[i], y)
    return y


def _affine_step_batch(mu, idx, y):
    A, b = mu.linear_parts(), mu.translations()
    if mu.dim == 1:
        return A[idx, :, 0] * y + b[idx]
    return np.einsum("nij,nj->ni", A[idx], y) + b[idx]


def forward_batch(mu: GeneratingMeasure, x, n: int, trials: int, seed: int,
                  threads: Optional[int] = None, checkpoints=None) -> np.ndarray:
    """Vectorised :func:`forward_orbit` for trials ``0..trials-1``.

    With ``checkpoints`` (sorted step counts), returns an array of shape
    (len(checkpoints), trials, d) holding the orbit after each count.
    """
    p = as_point(x, mu.dim)
    cps = [n] if checkpoints is None else sorted(int(c) for c in checkpoints)
    last = cps[-1] if cps else 0
    cdf = atom_cdf(mu.sampling_weights())
    if not mu.is_affine:
        res = np.empty((len(cps), trials, mu.dim))
        for i in range(trials):
            stream, y, prev = streams.Stream(seed, i), p, 0
            for j, cp in enumerate(cps):
                y = forward_orbit(mu, y, cp - prev, stream)
                res[j, i], prev = y, cp
        return res[0] if checkpoints is None else res

    def block(lo, hi):
        keys = streams.stream_keys(seed, np.arange(lo, hi, dtype=np.uint64))
        y = np.broadcast_to(p, (hi - lo, mu.dim)).copy()
        out = []
        for step in range(last + 1):
            while len(out) < len(cps) and cps[len(out)] == step:
                out.append(y.copy())
            if step == last:
                break
            y = _affine_step_batch(mu, sample_atom_indices(cdf, keys, step), y)
        return np.stack(out)

    parts = map_chunks(block, trials, threads=threads)
    res = np.concatenate(parts, axis=1) if parts else np.empty((len(cps), 0, mu.dim))
    return res[0] if checkpoints is None else res


def backward_word_batch(mu: GeneratingMeasure, x, n: int, trials: int, seed: int,
                        threads: Optional[int] = None) -> np.ndarray:
    """``g_1 ... g_n (x)`` at a fixed depth ``n`` for trials ``0..trials-1``."""
    if not mu.is_affine:
        raise TypeError("backward_word_batch supports affine measures only")
    p = as_point(x, mu.dim)
    A, b = mu.linear_parts(), mu.translations()
    cdf = atom_cdf(mu.sampling_weights())
    d = mu.dim

    def block(lo, hi):
        keys = streams.stream_keys(seed, np.arange(lo, hi, dtype=np.uint64))
        M = np.broadcast_to(np.eye(d), (hi - lo, d, d)).copy()
        c = np.zeros((hi - lo, d))
        for step in range(n):
            idx = sample_atom_indices(cdf, keys, step)
            c = c + np.einsum("nij,nj->ni", M, b[idx])
            M = np.einsum("nij,njk->nik", M, A[idx])
        return np.einsum("nij,j->ni", M, p) + c

    parts = map_chunks(block, trials, threads=threads)
    return np.concatenate(parts) if parts else np.empty((0, d))


def push_forward(mu: GeneratingMeasure, points: np.ndarray, seed: int) -> np.ndarray:
    """Apply one independent random map to each point (one step of ``mu * nu``)."""
    if not mu.is_affine:
        raise TypeError("push_forward supports affine measures only")
    cdf = atom_cdf(mu.sampling_weights())
    keys = streams.stream_keys(seed, np.arange(points.shape[0], dtype=np.uint64))
    return _affine_step_batch(mu, sample_atom_indices(cdf, keys, 0), points)


def is_piecewise_measure(mu: GeneratingMeasure) -> bool:
    return any(isinstance(g, PiecewiseLinear1D) for g in mu.maps)

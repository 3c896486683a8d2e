"""Tail curves, power-law fits, deviation frequencies and convergence checks."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import streams
from .maps import SingularSystem, as_point, fixed_point, lipschitz_constant
from .measure import (GeneratingMeasure, NonFiniteSupport, WorkBudgetExceeded, atom_cdf,
                      contraction_rate, log_norm_of_products, lyapunov_estimate, sample_atom_indices,
                      DEFAULT_WORK_BUDGET)
from .parallel import map_chunks
from .sampler import SampleSet, forward_batch, sample_batch

WILSON_Z = 1.959963984540054
DEFAULT_MIN_EXCEED = 30


class InsufficientTailData(ValueError):
    pass


class NoExpandingAtom(ValueError):
    pass


class InsufficientLdpData(ValueError):
    pass


def wilson_interval(k, n, z: float = WILSON_Z):
    """Wilson score interval for ``k`` successes out of ``n``."""
    k = np.asarray(k, dtype=np.float64)
    p = k / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return np.clip(centre - half, 0.0, 1.0), np.clip(centre + half, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class TailCurve:
    center: np.ndarray
    radii: np.ndarray
    exceed_counts: np.ndarray
    total: int
    ci_low: np.ndarray
    ci_high: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.exceed_counts)
        if np.any(np.diff(c) > 0) or np.any(c > self.total) or np.any(c < 0):
            raise ValueError("exceedance counts must be non-increasing and within [0, total]")

    @property
    def p_hat(self) -> np.ndarray:
        return self.exceed_counts / self.total

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("R,exceed,total,p_hat,ci_low,ci_high\n")
        for row in zip(self.radii, self.exceed_counts, self.p_hat, self.ci_low, self.ci_high):
            R, k, p, lo, hi = row
            buf.write(f"{R!r},{int(k)},{self.total},{p!r},{lo!r},{hi!r}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class TailFit:
    """OLS tail fit.

    ``stderr`` accounts for the correlation between exceedance frequencies at
    nested radii (they share draws); ``stderr_ols`` is the textbook OLS value,
    which treats the points as independent and understates the spread.
    """

    alpha_hat: float
    stderr: float
    r_squared: float
    radii_used: tuple
    intercept: float = 0.0
    stderr_ols: float = 0.0

    def to_text(self) -> str:
        radii = ";".join(repr(float(r)) for r in self.radii_used)
        return (f"alpha_hat={self.alpha_hat!r}\nstderr={self.stderr!r}\n"
                f"r_squared={self.r_squared!r}\nradii_used={radii}\n"
                f"stderr_ols={self.stderr_ols!r}\n")


def distances(samples, center) -> np.ndarray:
    pts = samples.points if isinstance(samples, SampleSet) else np.asarray(samples, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    c = as_point(center, pts.shape[1])
    return np.linalg.norm(pts - c, axis=1)


def empirical_tail(samples, center, radii: Sequence[float]) -> TailCurve:
    """Count draws at distance ``>= R`` from ``center`` for each radius."""
    dist = distances(samples, center)
    if dist.size == 0:
        raise InsufficientTailData("empty sample set")
    R = np.asarray(radii, dtype=np.float64)
    if np.any(R <= 0) or np.any(np.diff(R) <= 0):
        raise ValueError("radii must be positive and increasing")
    srt = np.sort(dist)
    counts = dist.size - np.searchsorted(srt, R, side="left")
    lo, hi = wilson_interval(counts, dist.size)
    return TailCurve(as_point(center), R, counts.astype(np.int64), int(dist.size), lo, hi)


def geometric_radii(samples, center, r0: Optional[float] = None, step: float = math.sqrt(2.0),
                    min_exceed: int = 1) -> np.ndarray:
    """``R_j = R_0 * 2^(j/2)`` from the median distance up to where fewer than
    ``min_exceed`` draws remain outside."""
    dist = np.sort(distances(samples, center))
    if dist.size == 0:
        return np.empty(0)
    if r0 is None:
        r0 = float(np.median(dist))
        if r0 <= 0:
            pos = dist[dist > 0]
            if pos.size == 0:
                return np.empty(0)
            r0 = float(pos[0])
    out = []
    R = r0
    while dist.size - np.searchsorted(dist, R, side="left") >= max(min_exceed, 1):
        out.append(R)
        R *= step
    return np.array(out)


def fit_tail_exponent(curve: TailCurve, min_exceed: int = DEFAULT_MIN_EXCEED) -> TailFit:
    """OLS of ``log p_hat`` on ``log R`` over radii with enough exceedances."""
    use = (curve.exceed_counts >= max(min_exceed, 1))
    if int(use.sum()) < 3:
        raise InsufficientTailData(
            f"only {int(use.sum())} radii have at least {min_exceed} exceedances; need 3")
    x = np.log(curve.radii[use])
    p = curve.p_hat[use]
    fit = stats.linregress(x, np.log(p))
    return TailFit(float(-fit.slope), _nested_count_stderr(x, p, curve.total),
                   float(fit.rvalue**2), tuple(float(r) for r in curve.radii[use]),
                   float(fit.intercept), float(fit.stderr))


def _nested_count_stderr(x: np.ndarray, p: np.ndarray, total: int) -> float:
    """Standard error of the OLS slope when ``log p_hat`` values share draws.

    For radii ``R_i <= R_j`` the delta method gives
    ``Cov(log p_i, log p_j) ~ (1 - p_i) / (total * p_i)``; the slope is the
    linear functional ``w . log p`` with the usual OLS weights ``w``.
    """
    w = (x - x.mean()) / np.sum((x - x.mean()) ** 2)
    i = np.arange(x.size)
    cov = ((1.0 - p) / (total * p))[np.minimum.outer(i, i)]
    return float(np.sqrt(max(w @ cov @ w, 0.0)))


@dataclass(frozen=True)
class LowerBound:
    alpha_1: float
    atom_index: int
    fixed_point: np.ndarray

    def to_text(self) -> str:
        fp = ";".join(f"{v:.10g}" for v in self.fixed_point)
        return f"alpha_1={self.alpha_1:.10g}\nfixed_point={fp}\natom={self.atom_index}\n"


def lower_bound_exponent(mu: GeneratingMeasure) -> LowerBound:
    """Smallest ``-log p / log rho`` over expanding atoms, with its fixed point.

    Iterating the witnessing atom ``k`` times pushes mass ``p^k`` out to
    distance ``rho^k``, so the tail cannot decay faster than ``R^-alpha_1``.
    """
    if not mu.is_affine or not mu.is_finite:
        raise NonFiniteSupport("lower_bound_exponent needs a finite measure on affine maps")
    best = None
    for i, (g, p) in enumerate(mu.atoms):
        rho = lipschitz_constant(g)
        if rho > 1:
            a = -math.log(p) / math.log(rho)
            if best is None or a < best[0]:
                best = (a, i)
    if best is None:
        raise NoExpandingAtom("every atom has rho <= 1; no polynomial lower bound applies")
    a, i = best
    return LowerBound(a, i, fixed_point(mu.atoms[i][0]))


def default_center(mu: GeneratingMeasure, samples: Optional[SampleSet] = None) -> np.ndarray:
    """Fixed point of the lower-bound witness when there is one, else the sample mean."""
    try:
        return lower_bound_exponent(mu).fixed_point
    except (NoExpandingAtom, SingularSystem, NonFiniteSupport):
        if samples is not None and len(samples):
            return samples.points.mean(axis=0)
        return np.zeros(mu.dim)


class LdpVariant(str, Enum):
    FACTORWISE = "factorwise"
    PRODUCT = "product"


@dataclass(frozen=True, eq=False)
class LdpCurve:
    epsilon: float
    n_grid: np.ndarray
    event_freqs: np.ndarray
    variant: LdpVariant
    trials: int
    deviations: np.ndarray
    reference: float
    metadata: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("n,trials,deviations,freq\n")
        for n, k, f in zip(self.n_grid, self.deviations, self.event_freqs):
            buf.write(f"{int(n)},{self.trials},{int(k)},{float(f)!r}\n")
        return buf.getvalue()


def _factorwise_block(mu, n_grid, epsilon, chi, seed, lo, hi):
    cdf = atom_cdf(mu.weights)
    log_rho = mu.log_rhos()
    keys = streams.stream_keys(seed, np.arange(lo, hi, dtype=np.uint64))
    s = np.zeros(hi - lo)
    hits = []
    grid = list(n_grid)
    for step in range(grid[-1]):
        s += log_rho[sample_atom_indices(cdf, keys, step)]
        n = step + 1
        while grid and grid[0] == n:
            grid.pop(0)
            hits.append(int(np.count_nonzero(np.abs(n * chi - s) > epsilon * n)))
    return np.array(hits)


def ldp_empirical(mu: GeneratingMeasure, epsilon: float, n_grid: Sequence[int], trials: int,
                  seed: int, variant=LdpVariant.FACTORWISE, threads: Optional[int] = None,
                  work_budget: int = DEFAULT_WORK_BUDGET) -> LdpCurve:
    """Frequency of ``|n ref - log rho| > eps n`` across independent trials.

    FACTORWISE uses ``log rho(g_1) + ... + log rho(g_n)`` against ``n chi``;
    PRODUCT uses ``log rho(g_1 ... g_n)`` against ``n`` times a Lyapunov
    estimate taken at the largest ``n`` of the grid on independent streams.
    All grid points share the same trials (prefixes of one word).
    """
    variant = LdpVariant(variant)
    grid = np.array(sorted(set(int(n) for n in n_grid)))
    if grid.size == 0 or grid[0] < 1:
        raise ValueError("n_grid must contain positive integers")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if trials < 1000:
        raise ValueError("ldp_empirical needs at least 1000 trials")
    if not mu.is_finite:
        raise NonFiniteSupport("ldp_empirical needs a finite measure")
    n_max = int(grid[-1])
    if n_max * trials > work_budget:
        raise WorkBudgetExceeded(f"n * trials = {n_max * trials} exceeds budget {work_budget}")
    meta = {}
    if variant is LdpVariant.FACTORWISE:
        ref = contraction_rate(mu)
        parts = map_chunks(lambda lo, hi: _factorwise_block(mu, grid, epsilon, ref, seed, lo, hi),
                           trials, threads=threads)
        dev = np.sum(parts, axis=0)
    else:
        ref_seed = int(streams.stream_keys(seed, np.array([2**63], dtype=np.uint64))[0])
        ref, ref_se = lyapunov_estimate(mu, n_max, trials, ref_seed, threads=threads,
                                        work_budget=work_budget)
        meta = {"lambda_ref": ref, "lambda_ref_stderr": ref_se, "lambda_ref_n": n_max,
                "note": "lambda reference is itself a finite-n Monte Carlo estimate"}

        def block(lo, hi):
            logs = log_norm_of_products(mu, n_max, lo, hi, seed, n_checkpoints=grid)
            return np.count_nonzero(np.abs(grid[:, None] * ref - logs) > epsilon * grid[:, None],
                                    axis=1)

        dev = np.sum(map_chunks(block, trials, threads=threads), axis=0)
    dev = np.asarray(dev, dtype=np.int64)
    return LdpCurve(float(epsilon), grid, dev / trials, variant, int(trials), dev, float(ref), meta)


def ldp_rate_fit(curve: LdpCurve) -> tuple:
    """Slope of ``-log freq`` against ``n`` over grid points with non-zero frequency.

    Returns ``(inf, 0.0)`` when every frequency is zero.
    """
    f = np.asarray(curve.event_freqs)
    nz = f > 0
    if not nz.any():
        return math.inf, 0.0
    if nz.sum() < 3:
        raise InsufficientLdpData(f"only {int(nz.sum())} grid points with non-zero frequency")
    fit = stats.linregress(curve.n_grid[nz].astype(float), -np.log(f[nz]))
    return float(fit.slope), float(fit.stderr)


def bump_value(R: float, x, y) -> np.ndarray:
    """Ramp in ``d(y, x)``: 0 up to ``R/2``, 1 from ``R`` on, linear between."""
    if not R > 0:
        raise ValueError("R must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    # y is one point, a batch of rows, or (on the line) a flat batch of reals
    if y.ndim == 2:
        d = np.linalg.norm(y - x, axis=1)
    elif x.size == 1:
        d = np.abs(y - x[0])
    else:
        d = np.linalg.norm(y - x)
    return np.clip((d - R / 2.0) / (R / 2.0), 0.0, 1.0)


@dataclass(frozen=True)
class ConvergenceDiagnostic:
    n_grid: tuple
    gaps: tuple
    noise: tuple
    theta_hat: Optional[float]
    below_noise: bool
    reference_mean: float

    @property
    def rows(self) -> list:
        return list(zip(self.n_grid, self.gaps))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("n,gap,noise,resolved\n")
        for n, g, s in zip(self.n_grid, self.gaps, self.noise):
            buf.write(f"{n},{g!r},{s!r},{int(g > 2 * s)}\n")
        return buf.getvalue()


def convergence_diagnostic(mu: GeneratingMeasure, x, R: float, n_grid: Sequence[int], trials: int,
                           seed: int, center=None, reference: Optional[SampleSet] = None,
                           reference_tol: float = 1e-8, threads: Optional[int] = None
                           ) -> ConvergenceDiagnostic:
    """Distance between ``n``-step forward laws and the stationary law, seen
    through the ramp function ``bump_value(R, center, .)``.

    A gap counts as resolved when it exceeds twice its Monte Carlo noise
    floor; with three or more resolved gaps an exponential rate is fitted.
    """
    if not mu.is_finite:
        raise NonFiniteSupport("convergence_diagnostic needs a finite measure")
    p = as_point(x, mu.dim)
    c = p if center is None else as_point(center, mu.dim)
    grid = sorted(set(int(n) for n in n_grid))
    if reference is None:
        ref_seed = int(streams.stream_keys(seed, np.array([2**63 + 1], dtype=np.uint64))[0])
        reference = sample_batch(mu, p, reference_tol, 10 * trials, seed=ref_seed, threads=threads)
    if len(reference) < 10 * trials:
        raise ValueError("reference sample set must hold at least 10 * trials draws")
    f_ref = bump_value(R, c, reference.points)
    ref_mean = float(f_ref.mean())
    ref_var = float(f_ref.var()) / len(reference)
    orbits = forward_batch(mu, p, 0, trials, seed, threads=threads, checkpoints=grid)
    gaps, noise = [], []
    for k in range(len(grid)):
        f = bump_value(R, c, orbits[k])
        gaps.append(abs(float(f.mean()) - ref_mean))
        noise.append(math.sqrt(float(f.var()) / trials + ref_var))
    resolved = [i for i, (g, s) in enumerate(zip(gaps, noise)) if g > 2 * s and g > 0]
    theta = None
    if len(resolved) >= 3:
        fit = stats.linregress([grid[i] for i in resolved], [math.log(gaps[i]) for i in resolved])
        theta = float(-fit.slope)
    below = not (gaps[-1] > 2 * noise[-1] and gaps[-1] > 0) if grid else True
    return ConvergenceDiagnostic(tuple(grid), tuple(gaps), tuple(noise), theta, below, ref_mean)

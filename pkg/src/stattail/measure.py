"""Generating measures: weighted maps, moments, Lyapunov exponents, Cramér rates."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import streams
from .maps import (AffineMap, LipschitzMap, PiecewiseLinear1D, Similarity, lipschitz_constant,
                   map_descriptor, ramp_map)
from .parallel import map_chunks

WEIGHT_TOL = 1e-12
RESCALE_EVERY = 32
DEFAULT_WORK_BUDGET = 2 * 10**9
DEFAULT_T_MAX = 200.0
GOLDEN_TOL = 1e-10


class ZeroLipschitz(ValueError):
    pass


class NonFiniteSupport(ValueError):
    """The operation needs a finitely supported measure."""


class WorkBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class MomentValue:
    """``E[rho^t]``; ``diverges`` flags an infinite moment.

    ``witness`` is the atom index that exhibits the divergence when one exists
    (a term or partial sum past the bound), ``error`` a certified bound on the
    truncation error of ``value`` for countable presets.
    """

    t: float
    value: float
    diverges: bool = False
    witness: Optional[int] = None
    error: float = 0.0
    reason: str = ""

    def __float__(self):
        return self.value


def _integral_log_over_power(a: float, s: float) -> float:
    """``int_a^inf log(x) / x^s dx`` for s > 1."""
    return a ** (1.0 - s) * ((s - 1.0) * math.log(a) + 1.0) / (s - 1.0) ** 2


def _bracket(partial: float, tail_lo: float, tail_hi: float):
    return partial + 0.5 * (tail_lo + tail_hi), 0.5 * (tail_hi - tail_lo)


class SquareSpikeSequence:
    """Countable measure ``sum_n p_n delta_{f_n}`` with ``p_n = 6 / (pi^2 n^2)``.

    ``f_n`` is 0 left of ``n`` and ``a_n (x - n)`` to the right, with
    ``a_n = 1/n`` off the squares and ``a_{k^2} = k^k``.  All series are
    summed in closed form: partial sums up to ``terms`` plus integral
    brackets for the remainder, which gives certified error bars.
    """

    name = "sequence_example"
    norm = 6.0 / math.pi**2

    def __init__(self, truncation: int, terms: int = 2_000_000):
        if truncation < 10:
            raise ValueError("sequence_example needs N >= 10")
        self.truncation = int(truncation)
        self.terms = int(terms)

    @staticmethod
    def log_slope(n: np.ndarray) -> np.ndarray:
        n = np.asarray(n, dtype=np.int64)
        k = np.rint(np.sqrt(n)).astype(np.int64)
        square = k * k == n
        return np.where(square, k * np.log(np.maximum(k, 1)), -np.log(n))

    def weights(self, n: np.ndarray) -> np.ndarray:
        return self.norm / np.asarray(n, dtype=np.float64) ** 2

    def atoms(self) -> list:
        n = np.arange(1, self.truncation + 1)
        slopes = np.exp(self.log_slope(n))
        return [(ramp_map(float(i), float(a)), float(p))
                for i, a, p in zip(n, slopes, self.weights(n))]

    def tail_mass(self):
        """Mass beyond the truncation index, as (estimate, certified error)."""
        N = self.truncation
        return _bracket(0.0, self.norm / (N + 1), self.norm / N)

    def chi(self):
        """Contraction rate of the full countable measure with certified error."""
        M = self.terms
        n = np.arange(1, M + 1, dtype=np.float64)
        # every index contributes -log n; squares k^2 then add back 2 log k + k log k
        s1 = math.fsum(np.log(n) / n**2)
        s1_lo = _integral_log_over_power(M + 1, 2.0)
        s1_hi = _integral_log_over_power(M, 2.0)
        K = int(math.isqrt(M))
        k = np.arange(1, K + 1, dtype=np.float64)
        s2 = math.fsum(2.0 * np.log(k) / k**4 + np.log(k) / k**3)
        s2_lo = 2 * _integral_log_over_power(K + 1, 4.0) + _integral_log_over_power(K + 1, 3.0)
        s2_hi = 2 * _integral_log_over_power(K, 4.0) + _integral_log_over_power(K, 3.0)
        v1, e1 = _bracket(s1, s1_lo, s1_hi)
        v2, e2 = _bracket(s2, s2_lo, s2_hi)
        value = self.norm * (v2 - v1)
        err = self.norm * (e1 + e2) + 1e-14
        return value, err

    def moment(self, t: float, bound: float = 1e6) -> MomentValue:
        if t == 0:
            return MomentValue(t, 1.0)
        if t > 0:
            # square terms norm * k^(k t - 4) grow without bound
            witness, acc = None, -math.inf
            for start in range(1, 10**8, 1 << 16):
                k = np.arange(start, start + (1 << 16), dtype=np.float64)
                log_terms = math.log(self.norm) + (k * t - 4.0) * np.log(k)
                csum = np.logaddexp.accumulate(np.concatenate(([acc], log_terms)))[1:]
                hit = np.nonzero(csum > math.log(bound))[0]
                if hit.size:
                    witness = int(k[hit[0]]) ** 2
                    break
                acc = float(csum[-1])
            return MomentValue(t, math.inf, True, witness, reason="square-index terms diverge")
        if t <= -1:
            return MomentValue(t, math.inf, True, None,
                               reason=f"off-square terms compare to a p-series with exponent {2 + t:g} <= 1")
        s = 2.0 + t  # off-square terms are norm * n^-s
        M = self.terms
        n = np.arange(1, M + 1, dtype=np.float64)
        z1 = math.fsum(n**-s)
        v1, e1 = _bracket(z1, (M + 1) ** (1 - s) / (s - 1), M ** (1 - s) / (s - 1))
        K = int(math.isqrt(M))
        k = np.arange(1, K + 1, dtype=np.float64)
        z2 = math.fsum(k ** (-2 * s))
        v2, e2 = _bracket(z2, (K + 1) ** (1 - 2 * s) / (2 * s - 1), K ** (1 - 2 * s) / (2 * s - 1))
        # spike terms k^(k t - 4) decay super-exponentially
        kk = np.arange(1, 400, dtype=np.float64)
        z3 = math.fsum(np.exp((kk * t - 4.0) * np.log(kk)))
        value = self.norm * (v1 - v2 + z3)
        return MomentValue(t, value, error=self.norm * (e1 + e2) + 1e-14)

    def descriptor(self) -> dict:
        return {"preset": self.name, "N": self.truncation}


@dataclass(frozen=True, eq=False)
class GeneratingMeasure:
    """A probability measure on Lipschitz maps.

    Finite measures list every atom.  Countable presets list their first
    ``N`` atoms with the original (unnormalised) weights and carry the
    analytic remainder in ``tail``.
    """

    atoms: tuple
    tail: Optional[SquareSpikeSequence] = None
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        atoms = tuple((g, float(p)) for g, p in self.atoms)
        if not atoms:
            raise ValueError("a generating measure needs at least one atom")
        dims = {g.dim for g, _ in atoms}
        if len(dims) != 1:
            raise ValueError(f"atoms act on different dimensions {sorted(dims)}")
        w = np.array([p for _, p in atoms])
        if np.any(~np.isfinite(w)) or np.any(w <= 0) or np.any(w > 1):
            raise ValueError("every weight must lie in (0, 1]")
        total = math.fsum(w)
        if self.tail is None:
            if abs(total - 1.0) > WEIGHT_TOL:
                raise ValueError(f"weights sum to {total!r}, not 1 (weights sum != 1)")
        else:
            mass, err = self.tail.tail_mass()
            if abs(total + mass - 1.0) > err + WEIGHT_TOL:
                raise ValueError("truncated weights plus certified tail mass do not bracket 1")
        object.__setattr__(self, "atoms", atoms)

    @property
    def dim(self) -> int:
        return self.atoms[0][0].dim

    @property
    def maps(self) -> list:
        return [g for g, _ in self.atoms]

    @property
    def weights(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms])

    @property
    def is_finite(self) -> bool:
        return self.tail is None

    @property
    def is_affine(self) -> bool:
        return all(isinstance(g, (AffineMap, Similarity)) for g in self.maps)

    def sampling_weights(self) -> np.ndarray:
        """Weights renormalised over the listed atoms."""
        w = self.weights
        return w / math.fsum(w)

    def truncation_mass(self) -> float:
        return 0.0 if self.tail is None else self.tail.tail_mass()[0]

    def rhos(self) -> np.ndarray:
        if "rhos" not in self._cache:
            self._cache["rhos"] = np.array([lipschitz_constant(g) for g in self.maps])
        return self._cache["rhos"]

    def log_rhos(self) -> np.ndarray:
        r = self.rhos()
        if isinstance(self.tail, SquareSpikeSequence):
            return self.tail.log_slope(np.arange(1, len(r) + 1))
        with np.errstate(divide="ignore"):
            return np.log(r)

    def linear_parts(self) -> np.ndarray:
        """Stacked linear parts, shape (K, d, d); affine measures only."""
        if "A" not in self._cache:
            self._cache["A"] = np.stack([g.matrix for g in self.maps])
            self._cache["b"] = np.stack([g.translation for g in self.maps])
        return self._cache["A"]

    def translations(self) -> np.ndarray:
        self.linear_parts()
        return self._cache["b"]

    def content_hash(self) -> str:
        if "hash" not in self._cache:
            if self.tail is not None:
                payload = self.tail.descriptor()
            else:
                payload = [[map_descriptor(g), p] for g, p in self.atoms]
            blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
            self._cache["hash"] = hashlib.sha256(blob).hexdigest()
        return self._cache["hash"]

    def __repr__(self):
        label = self.name or f"{len(self.atoms)} atoms"
        return f"GeneratingMeasure({label}, dim={self.dim})"


def point_mass(g: LipschitzMap, name: str = "") -> GeneratingMeasure:
    return GeneratingMeasure(((g, 1.0),), name=name)


def contraction_rate_with_error(mu: GeneratingMeasure) -> tuple:
    """``(chi, certified_error)``; the error is 0 for finite measures."""
    if mu.tail is not None:
        return mu.tail.chi()
    r = mu.rhos()
    if np.any(r <= 0):
        raise ZeroLipschitz("an atom has Lipschitz constant 0, log rho is -inf")
    return math.fsum(mu.weights * np.log(r)), 0.0


def contraction_rate(mu: GeneratingMeasure) -> float:
    """``E[log rho(g)]`` under ``mu``."""
    return contraction_rate_with_error(mu)[0]


def moment(mu: GeneratingMeasure, t: float, bound: float = 1e6) -> MomentValue:
    """``E[rho(g)^t]``, with divergence reported rather than raised."""
    t = float(t)
    if mu.tail is not None:
        return mu.tail.moment(t, bound)
    if t == 0:
        return MomentValue(t, 1.0)
    r = mu.rhos()
    if t < 0 and np.any(r <= 0):
        raise ZeroLipschitz("negative moments need every rho > 0")
    with np.errstate(divide="ignore"):
        log_terms = np.log(mu.weights) + t * np.log(r)
    lse = float(logsumexp(log_terms))
    if lse > math.log(np.finfo(float).max):
        return MomentValue(t, math.inf, True, int(np.argmax(log_terms)), reason="overflow")
    return MomentValue(t, math.exp(lse))


def log_moment(mu: GeneratingMeasure, t) -> np.ndarray:
    """``log E[rho^t]`` vectorised over ``t`` for finite measures (no overflow)."""
    if mu.tail is not None:
        raise NonFiniteSupport("log_moment is defined for finite measures")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    lw = np.log(mu.weights)
    lr = mu.log_rhos()
    return logsumexp(lw[None, :] + t[:, None] * lr[None, :], axis=1)


def rho_sup(mu: GeneratingMeasure) -> float:
    """Largest Lipschitz constant in the support; ``inf`` when unbounded."""
    if isinstance(mu.tail, SquareSpikeSequence):
        return math.inf
    return float(np.max(mu.rhos()))


def _sigma_max(W: np.ndarray) -> np.ndarray:
    if W.shape[1] == 1:
        return np.abs(W[:, 0, 0])
    return np.linalg.norm(W, ord=2, axis=(1, 2))


def sample_atom_indices(cdf: np.ndarray, keys: np.ndarray, counter) -> np.ndarray:
    """Inverse-CDF atom choice for each stream at one counter position."""
    u = streams.uniform(keys, counter)
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, cdf.size - 1)


def atom_cdf(weights: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return cdf


def log_norm_of_products(mu: GeneratingMeasure, n: int, lo: int, hi: int, seed: int,
                         n_checkpoints: Sequence[int] = ()) -> np.ndarray:
    """``log ||A_{g1} ... A_{gn}||`` for trials ``lo..hi-1``.

    Returns shape (hi - lo,) or, with checkpoints, (len(checkpoints), hi - lo)
    holding the value after each requested prefix length.
    """
    A = mu.linear_parts()
    d = mu.dim
    cdf = atom_cdf(mu.weights)
    keys = streams.stream_keys(seed, np.arange(lo, hi, dtype=np.uint64))
    m = hi - lo
    W = np.broadcast_to(np.eye(d), (m, d, d)).copy()
    logscale = np.zeros(m)
    checkpoints = sorted(set(int(c) for c in n_checkpoints))
    out = []
    for step in range(n):
        idx = sample_atom_indices(cdf, keys, step)
        if d == 1:
            W = W * A[idx]
        else:
            W = np.einsum("nij,njk->nik", W, A[idx])
        if (step + 1) % RESCALE_EVERY == 0:
            s = np.max(np.abs(W), axis=(1, 2))
            s = np.where(s > 0, s, 1.0)
            W = W / s[:, None, None]
            logscale += np.log(s)
        if checkpoints and step + 1 in checkpoints:
            with np.errstate(divide="ignore"):
                out.append(np.log(_sigma_max(W)) + logscale)
    if checkpoints:
        return np.array(out)
    with np.errstate(divide="ignore"):
        res = np.log(_sigma_max(W)) + logscale
    if not np.all(np.isfinite(res)):
        raise OverflowError("matrix product left the floating-point range despite rescaling")
    return res


def lyapunov_estimate(mu: GeneratingMeasure, n: int, trials: int, seed: int,
                      threads: Optional[int] = None,
                      work_budget: int = DEFAULT_WORK_BUDGET) -> tuple:
    """Monte Carlo estimate of ``(1/n) E[log rho(g_1 ... g_n)]`` and its standard error."""
    if not mu.is_finite or not mu.is_affine:
        raise NonFiniteSupport("lyapunov_estimate needs a finite measure on affine maps")
    if n < 1 or trials < 1:
        raise ValueError("n and trials must be positive")
    if n * trials > work_budget:
        raise WorkBudgetExceeded(f"n * trials = {n * trials} exceeds budget {work_budget}")
    parts = map_chunks(lambda lo, hi: log_norm_of_products(mu, n, lo, hi, seed), trials,
                       threads=threads)
    vals = np.concatenate(parts) / n
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return est, se


@dataclass(frozen=True, eq=False)
class RateFunction:
    grid: np.ndarray
    values: np.ndarray
    t_max: float

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if g.shape != v.shape or g.size == 0:
            raise ValueError("grid and values must match and be non-empty")
        if np.any(np.diff(g) <= 0):
            raise ValueError("rate grid must be increasing")
        if np.any(v < 0):
            raise ValueError("rate function values must be non-negative")
        for j in range(1, g.size - 1):
            a, b, c = v[j - 1], v[j], v[j + 1]
            if not np.all(np.isfinite([a, b, c])):
                continue
            w = (g[j] - g[j - 1]) / (g[j + 1] - g[j - 1])
            if b > (1 - w) * a + w * c + 1e-8:
                raise ValueError(f"rate function not convex at x={g[j]!r}")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    def __call__(self, x: float) -> float:
        return float(np.interp(x, self.grid, self.values))


def _golden_max(f, a: float, b: float, tol: float) -> tuple:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    best = max((f(a), a), (f(b), b), (fc, c), (fd, d))
    return best[1], best[0]


def legendre_value(mu: GeneratingMeasure, x: float, t_max: float = DEFAULT_T_MAX,
                   coarse: int = 801, tol: float = GOLDEN_TOL) -> float:
    """``sup_{|t| <= t_max} (t x - log E[rho^t])``."""
    t = np.linspace(-t_max, t_max, coarse)
    obj = t * x - log_moment(mu, t)
    j = int(np.argmax(obj))
    a, b = t[max(j - 1, 0)], t[min(j + 1, coarse - 1)]

    def f(s):
        return float(s * x - log_moment(mu, s)[0])

    _, best = _golden_max(f, a, b, tol)
    return max(best, float(obj[j]), 0.0)


def rate_function(mu: GeneratingMeasure, x_grid, t_max: float = DEFAULT_T_MAX) -> RateFunction:
    """Cramér rate of ``log rho(g)`` by numerical Legendre transform.

    Points outside ``[min log rho, max log rho]`` get ``inf``: no path of
    bounded increments reaches them.
    """
    x = np.asarray(x_grid, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty grid")
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    if not mu.is_finite:
        raise NonFiniteSupport("rate_function needs a finite measure")
    lr = mu.log_rhos()
    if not np.all(np.isfinite(lr)):
        raise ZeroLipschitz("rate_function needs every rho > 0")
    lo, hi = float(lr.min()), float(lr.max())
    slack = 1e-12 * max(1.0, abs(lo), abs(hi))
    vals = np.empty_like(x)
    for i, xi in enumerate(x):
        if xi < lo - slack or xi > hi + slack:
            vals[i] = math.inf
        else:
            vals[i] = legendre_value(mu, float(xi), t_max)
    return RateFunction(x, vals, float(t_max))

"""Lipschitz self-maps of R^d with exact Lipschitz constants.

Three concrete families are supported:

* :class:`AffineMap` ``x -> A x + b``; the Lipschitz constant is the largest
  singular value of ``A``.
* :class:`Similarity` ``x -> s U x + b`` with ``U`` orthogonal; the
  Lipschitz constant is ``s`` and distances scale exactly by ``s``.
* :class:`PiecewiseLinear1D`, continuous piecewise-linear maps of the line
  given by knot values plus two outer slopes.

All maps are frozen and hold read-only arrays, so they can be shared freely
between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

MAX_DIM = 64
MAX_KNOTS = 10**6
FIXED_POINT_COND_LIMIT = 1e12


class DimensionMismatch(ValueError):
    pass


class SingularSystem(ArithmeticError):
    """``I - A`` is numerically singular, so no unique fixed point exists."""


class KnotOverflow(OverflowError):
    pass


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def as_point(x, dim: int | None = None) -> np.ndarray:
    """Validate ``x`` as a point (finite 1-D coordinate vector)."""
    p = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if p.ndim != 1:
        raise ValueError(f"point must be a coordinate vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("point has non-finite coordinates")
    if dim is not None and p.shape[0] != dim:
        raise DimensionMismatch(f"point has dimension {p.shape[0]}, map expects {dim}")
    return p


@dataclass(frozen=True, eq=False)
class AffineMap:
    matrix: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        b = np.atleast_1d(np.asarray(self.translation, dtype=np.float64))
        if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
            raise DimensionMismatch(f"matrix {A.shape} incompatible with translation {b.shape}")
        if A.shape[0] > MAX_DIM:
            raise ValueError(f"dimension {A.shape[0]} exceeds {MAX_DIM}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("affine map has non-finite entries")
        object.__setattr__(self, "matrix", _frozen(A))
        object.__setattr__(self, "translation", _frozen(b))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, x) -> np.ndarray:
        return apply(self, x)

    def __repr__(self):
        return f"AffineMap(matrix={self.matrix.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class Similarity:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.rotation, dtype=np.float64))
        b = np.atleast_1d(np.asarray(self.translation, dtype=np.float64))
        s = float(self.scale)
        if not (np.isfinite(s) and s > 0):
            raise ValueError(f"similarity scale must be positive, got {s}")
        if U.shape[0] != U.shape[1] or U.shape[0] != b.shape[0]:
            raise DimensionMismatch(f"rotation {U.shape} incompatible with translation {b.shape}")
        if U.shape[0] > MAX_DIM:
            raise ValueError(f"dimension {U.shape[0]} exceeds {MAX_DIM}")
        if not np.allclose(U.T @ U, np.eye(U.shape[0]), rtol=0.0, atol=1e-10):
            raise ValueError("rotation is not orthogonal within 1e-10")
        if not np.all(np.isfinite(b)):
            raise ValueError("similarity has non-finite translation")
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "rotation", _frozen(U))
        object.__setattr__(self, "translation", _frozen(b))

    @property
    def dim(self) -> int:
        return self.rotation.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self.scale * self.rotation

    def __call__(self, x) -> np.ndarray:
        return apply(self, x)

    def __repr__(self):
        return (f"Similarity(scale={self.scale!r}, rotation={self.rotation.tolist()}, "
                f"translation={self.translation.tolist()})")


@dataclass(frozen=True, eq=False)
class PiecewiseLinear1D:
    """Continuous piecewise-linear map of the real line.

    Between consecutive knots the map interpolates ``values`` linearly;
    left of the first knot it has slope ``left_slope`` and right of the last
    knot slope ``right_slope``.
    """

    knots: np.ndarray
    values: np.ndarray
    left_slope: float
    right_slope: float

    def __post_init__(self):
        k = np.atleast_1d(np.asarray(self.knots, dtype=np.float64))
        v = np.atleast_1d(np.asarray(self.values, dtype=np.float64))
        if k.ndim != 1 or k.shape != v.shape or k.size == 0:
            raise ValueError("knots and values must be equal-length non-empty lists")
        if k.size > MAX_KNOTS:
            raise KnotOverflow(f"{k.size} knots exceeds the cap of {MAX_KNOTS}")
        if np.any(np.diff(k) <= 0):
            raise ValueError("knots must be strictly increasing")
        ls, rs = float(self.left_slope), float(self.right_slope)
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(v)) and np.isfinite(ls) and np.isfinite(rs)):
            raise ValueError("piecewise map has non-finite parameters")
        object.__setattr__(self, "knots", _frozen(k))
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "left_slope", ls)
        object.__setattr__(self, "right_slope", rs)

    dim = 1

    @property
    def slopes(self) -> np.ndarray:
        """All piece slopes, left to right including the two unbounded pieces."""
        inner = np.diff(self.values) / np.diff(self.knots)
        return np.concatenate(([self.left_slope], inner, [self.right_slope]))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Vectorised evaluation on an array of reals."""
        x = np.asarray(x, dtype=np.float64)
        k, v = self.knots, self.values
        y = np.interp(x, k, v)
        lo = x < k[0]
        hi = x > k[-1]
        y = np.where(lo, v[0] + self.left_slope * (x - k[0]), y)
        y = np.where(hi, v[-1] + self.right_slope * (x - k[-1]), y)
        return y

    def __call__(self, x) -> np.ndarray:
        return apply(self, x)

    def __repr__(self):
        return (f"PiecewiseLinear1D(knots={self.knots.tolist()}, values={self.values.tolist()}, "
                f"left_slope={self.left_slope!r}, right_slope={self.right_slope!r})")


LipschitzMap = Union[AffineMap, Similarity, PiecewiseLinear1D]


def affine(a, b) -> AffineMap:
    """Convenience constructor; scalars give a 1-D map ``x -> a x + b``."""
    return AffineMap(np.atleast_2d(a), np.atleast_1d(b))


def ramp_map(n: float, slope: float) -> PiecewiseLinear1D:
    """The map that is 0 on ``(-inf, n]`` and ``slope * (x - n)`` beyond ``n``."""
    return PiecewiseLinear1D([n], [0.0], 0.0, slope)


def apply(g: LipschitzMap, x) -> np.ndarray:
    p = as_point(x, g.dim)
    if isinstance(g, PiecewiseLinear1D):
        return g.evaluate(p)
    return g.matrix @ p + g.translation


def lipschitz_constant(g: LipschitzMap) -> float:
    """Exact Lipschitz constant under the Euclidean metric."""
    if isinstance(g, Similarity):
        return g.scale
    if isinstance(g, PiecewiseLinear1D):
        return float(np.max(np.abs(g.slopes)))
    A = g.matrix
    if A.shape[0] == 1:
        return abs(float(A[0, 0]))
    # eigvalsh raises LinAlgError when the symmetric eigensolver fails to converge
    ev = np.linalg.eigvalsh(A.T @ A)
    return float(np.sqrt(max(ev[-1], 0.0)))


def linear_part(g: LipschitzMap) -> np.ndarray:
    if isinstance(g, PiecewiseLinear1D):
        raise TypeError("piecewise maps have no single linear part")
    return g.matrix


def _to_piecewise(g: LipschitzMap) -> PiecewiseLinear1D:
    if isinstance(g, PiecewiseLinear1D):
        return g
    if g.dim != 1:
        raise DimensionMismatch("only 1-D affine maps combine with piecewise maps")
    a = float(g.matrix[0, 0])
    b = float(g.translation[0])
    return PiecewiseLinear1D([0.0], [b], a, a)


def _preimages(h: PiecewiseLinear1D, targets: np.ndarray) -> np.ndarray:
    """All x with h(x) in ``targets``, restricted to pieces where h is not constant."""
    k, v = h.knots, h.values
    out = []
    # unbounded left piece
    if h.left_slope != 0:
        x = k[0] + (targets - v[0]) / h.left_slope
        out.append(x[x < k[0]])
    for j in range(k.size - 1):
        v0, v1 = v[j], v[j + 1]
        if v0 == v1:
            continue
        lo, hi = min(v0, v1), max(v0, v1)
        t = targets[(targets >= lo) & (targets <= hi)]
        out.append(k[j] + (t - v0) * (k[j + 1] - k[j]) / (v1 - v0))
    if h.right_slope != 0:
        x = k[-1] + (targets - v[-1]) / h.right_slope
        out.append(x[x > k[-1]])
    return np.concatenate(out) if out else np.empty(0)


def _compose_piecewise(g: PiecewiseLinear1D, h: PiecewiseLinear1D, max_knots: int) -> PiecewiseLinear1D:
    knots = np.union1d(h.knots, _preimages(h, g.knots))
    if knots.size > max_knots:
        raise KnotOverflow(f"composition needs {knots.size} knots, cap is {max_knots}")
    values = g.evaluate(h.evaluate(knots))

    def outer(slope_h: float, toward_plus: bool) -> float:
        if slope_h == 0:
            return 0.0
        goes_up = (slope_h > 0) == toward_plus
        return slope_h * (g.right_slope if goes_up else g.left_slope)

    return PiecewiseLinear1D(knots, values, outer(h.left_slope, False), outer(h.right_slope, True))


def compose(g: LipschitzMap, h: LipschitzMap, max_knots: int = MAX_KNOTS) -> LipschitzMap:
    """Return ``g o h`` (apply ``h`` first)."""
    if g.dim != h.dim:
        raise DimensionMismatch(f"cannot compose dimensions {g.dim} and {h.dim}")
    if isinstance(g, PiecewiseLinear1D) or isinstance(h, PiecewiseLinear1D):
        return _compose_piecewise(_to_piecewise(g), _to_piecewise(h), max_knots)
    b = g.matrix @ h.translation + g.translation
    if isinstance(g, Similarity) and isinstance(h, Similarity):
        return Similarity(g.scale * h.scale, g.rotation @ h.rotation, b)
    return AffineMap(g.matrix @ h.matrix, b)


def fixed_point(g: LipschitzMap) -> np.ndarray:
    """Unique solution of ``g(x) = x`` for affine maps and similarities."""
    if isinstance(g, PiecewiseLinear1D):
        raise TypeError("fixed_point is defined for affine maps and similarities only")
    M = np.eye(g.dim) - g.matrix
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > FIXED_POINT_COND_LIMIT:
        raise SingularSystem(f"I - A has condition number {cond:.3g}; no unique fixed point")
    x0 = np.linalg.solve(M, g.translation)
    resid = np.linalg.norm(apply(g, x0) - x0)
    if resid > 1e-9 * (1.0 + np.linalg.norm(x0)):
        raise SingularSystem(f"fixed point residual {resid:.3g} too large")
    return x0


def map_descriptor(g: LipschitzMap) -> dict:
    """Plain-data description used for content hashing and config output."""
    if isinstance(g, Similarity):
        return {"kind": "similarity", "scale": g.scale, "rotation": g.rotation.tolist(),
                "translation": g.translation.tolist()}
    if isinstance(g, PiecewiseLinear1D):
        return {"kind": "piecewise", "knots": g.knots.tolist(), "values": g.values.tolist(),
                "left_slope": g.left_slope, "right_slope": g.right_slope}
    return {"kind": "affine", "matrix": g.matrix.tolist(), "translation": g.translation.tolist()}

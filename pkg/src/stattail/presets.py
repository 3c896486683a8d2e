"""Named generating measures.

=========================  ==================================================
name                       measure
=========================  ==================================================
``prime_q(q)``             1/3 on ``q/(q-1) x + 1``, 2/3 on ``q/(q+3) x - 1``
``shear_matrix``           point mass on ``[[1, 1], [0, 1]]`` acting on R^2
``bernoulli``              1/2 on ``x/2 - 1``, 1/2 on ``x/2 + 1``
``single_contraction``     point mass on ``x/2 + 1``
``compact_flip``           1/2 on ``x/2 + 1``, 1/2 on ``-x``
``noncompact_translation`` 1/2 on ``x/2 + 1``, 1/2 on ``x + 1``
``sequence_example(N)``    ramps ``f_n`` with weights ``6/(pi^2 n^2)``, first N
=========================  ==================================================
"""

from __future__ import annotations

import logging

from .maps import AffineMap, Similarity
from .measure import GeneratingMeasure, SquareSpikeSequence, point_mass

log = logging.getLogger(__name__)

# k^k must stay finite in double precision for every listed square index k^2
MAX_SEQUENCE_N = 143**2

PRESET_NAMES = ("prime_q", "shear_matrix", "bernoulli", "single_contraction", "compact_flip",
                "noncompact_translation", "sequence_example")


class UnknownPreset(KeyError):
    pass


def isprime(q: int) -> bool:
    if q < 2:
        return False
    return all(q % f for f in range(2, int(q**0.5) + 1))


def sim1(scale: float, translation: float) -> Similarity:
    """1-D similarity ``x -> scale * x + translation`` (negative scale flips)."""
    sign = -1.0 if scale < 0 else 1.0
    return Similarity(abs(scale), [[sign]], [translation])


def prime_q(q: int = 5) -> GeneratingMeasure:
    if int(q) != q or q < 5:
        raise ValueError(f"prime_q needs an integer q >= 5, got {q!r}")
    q = int(q)
    if not isprime(q):
        log.info("prime_q: q=%d is composite; tail results do not depend on primality", q)
    g1 = sim1(q / (q - 1), 1.0)
    g2 = sim1(q / (q + 3), -1.0)
    return GeneratingMeasure(((g1, 1 / 3), (g2, 2 / 3)), name=f"prime_q({q})")


def shear_matrix() -> GeneratingMeasure:
    return point_mass(AffineMap([[1.0, 1.0], [0.0, 1.0]], [0.0, 0.0]), name="shear_matrix")


def bernoulli() -> GeneratingMeasure:
    return GeneratingMeasure(((sim1(0.5, -1.0), 0.5), (sim1(0.5, 1.0), 0.5)), name="bernoulli")


def single_contraction() -> GeneratingMeasure:
    return point_mass(sim1(0.5, 1.0), name="single_contraction")


def compact_flip() -> GeneratingMeasure:
    return GeneratingMeasure(((sim1(0.5, 1.0), 0.5), (sim1(-1.0, 0.0), 0.5)), name="compact_flip")


def noncompact_translation() -> GeneratingMeasure:
    return GeneratingMeasure(((sim1(0.5, 1.0), 0.5), (sim1(1.0, 1.0), 0.5)),
                             name="noncompact_translation")


def sequence_example(N: int = 10**4) -> GeneratingMeasure:
    if int(N) != N or N < 10:
        raise ValueError(f"sequence_example needs an integer N >= 10, got {N!r}")
    if N > MAX_SEQUENCE_N:
        raise ValueError(f"sequence_example supports N <= {MAX_SEQUENCE_N} (k^k overflows beyond)")
    tail = SquareSpikeSequence(int(N))
    return GeneratingMeasure(tuple(tail.atoms()), tail=tail, name=f"sequence_example({int(N)})")


_BUILDERS = {
    "prime_q": prime_q,
    "shear_matrix": shear_matrix,
    "bernoulli": bernoulli,
    "single_contraction": single_contraction,
    "compact_flip": compact_flip,
    "noncompact_translation": noncompact_translation,
    "sequence_example": sequence_example,
}


def preset(name: str, **params) -> GeneratingMeasure:
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}") from None
    return builder(**params)


__all__ = ["preset", "PRESET_NAMES", "UnknownPreset", "prime_q", "shear_matrix", "bernoulli",
           "single_contraction", "compact_flip", "noncompact_translation", "sequence_example",
           "sim1"]

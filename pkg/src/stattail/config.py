"""Experiment configuration documents.

A configuration is a single TOML document::

    experiment = "tail"          # chi moment lyapunov sample tail ldp rate
                                 # entropy lowerbound diagnose
    seed = 12345
    space_dim = 1                # optional; inferred from the measure

    [preset]                     # either a preset ...
    name = "prime_q"
    q = 5

    [[maps]]                     # ... or explicit weighted maps
    kind = "affine"              # affine | similarity | piecewise
    weight = 0.5
    matrix = [[0.5]]
    translation = [1.0]

    [knobs]                      # numeric settings; every key optional
    tol = 1e-6
    count = 100000

Unknown keys anywhere are errors.  See :class:`Knobs` for every knob, its
default and its admissible range.
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Union

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .maps import AffineMap, PiecewiseLinear1D, Similarity
from .measure import WEIGHT_TOL, GeneratingMeasure
from .presets import PRESET_NAMES, preset

EXPERIMENTS = ("chi", "moment", "lyapunov", "sample", "tail", "ldp", "rate", "entropy",
               "lowerbound", "diagnose")

PRESET_PARAMS = {"prime_q": {"q"}, "sequence_example": {"N"}}

MAP_KEYS = {
    "affine": {"kind", "weight", "matrix", "translation"},
    "similarity": {"kind", "weight", "scale", "rotation", "translation"},
    "piecewise": {"kind", "weight", "knots", "values", "left_slope", "right_slope"},
}

Auto = str  # the literal "auto"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key or position."""


@dataclass(frozen=True)
class Knobs:
    """Numeric settings with their defaults.

    ``tol``          (0, 1]          backward-iteration tolerance
    ``count``        [0, 1e8]        stationary draws
    ``max_n``        >= 1 or auto    step cap per draw
    ``start``        point or auto   start point (auto: origin)
    ``n``            [1, 1e6]        product length for lyapunov
    ``trials``       [1, 1e8]        Monte Carlo trials
    ``n_grid``       positive ints   ldp / diagnose grid
    ``epsilon``      > 0             deviation size for ldp
    ``variant``      factorwise|product
    ``radii``        list or auto    tail radii (auto: geometric from the median)
    ``center``       point or auto   tail / entropy center
    ``min_exceed``   >= 1            exceedances needed per fitted radius
    ``sigma``        > 0             smoothing bandwidth
    ``eval_count``   >= 10           entropy evaluation points
    ``L``            > 1             annulus ratio
    ``t_grid``       reals           moment exponents
    ``x_grid``       reals or auto   rate-function abscissae
    ``t_max``        > 0             Legendre search bound
    ``R``            > 0             ramp radius for diagnose
    ``truncation_ceiling`` [0, 1]    allowed fraction of truncated draws
    """

    tol: float = 1e-6
    count: int = 100_000
    max_n: Union[int, Auto] = "auto"
    start: Union[list, Auto] = "auto"
    n: int = 1000
    trials: int = 10_000
    n_grid: list = field(default_factory=lambda: [50, 100, 200, 400])
    epsilon: float = 0.1
    variant: str = "factorwise"
    radii: Union[list, Auto] = "auto"
    center: Union[list, Auto] = "auto"
    min_exceed: int = 30
    sigma: float = 0.1
    eval_count: int = 10_000
    L: float = 2.0
    t_grid: list = field(default_factory=lambda: [-1.0, -0.5, 0.0, 0.5, 1.0, 2.0])
    x_grid: Union[list, Auto] = "auto"
    t_max: float = 200.0
    R: float = 8.0
    truncation_ceiling: float = 1e-3


KNOB_NAMES = {f.name for f in fields(Knobs)}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    space_dim: int
    preset: Optional[dict] = None
    maps: Optional[tuple] = None
    knobs: Knobs = field(default_factory=Knobs)

    def measure(self) -> GeneratingMeasure:
        if self.preset is not None:
            params = {k: v for k, v in self.preset.items() if k != "name"}
            return preset(self.preset["name"], **params)
        return GeneratingMeasure(tuple((build_map(m), float(m["weight"])) for m in self.maps))

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def build_map(desc: dict):
    kind = desc["kind"]
    if kind == "affine":
        return AffineMap(desc["matrix"], desc["translation"])
    if kind == "similarity":
        return Similarity(desc["scale"], desc["rotation"], desc["translation"])
    return PiecewiseLinear1D(desc["knots"], desc["values"], desc["left_slope"], desc["right_slope"])


def _is_auto(v) -> bool:
    return isinstance(v, str) and v == "auto"


def _num(key, v, lo=None, hi=None, integer=False, lo_open=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"knobs.{key}: expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"knobs.{key}: expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"knobs.{key}: must be finite")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"knobs.{key}: {v!r} below allowed range")
    if hi is not None and v > hi:
        raise ConfigError(f"knobs.{key}: {v!r} above allowed range")
    return int(v) if integer else float(v)


def _num_list(key, v, **kw):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"knobs.{key}: expected a non-empty list")
    return [_num(key, x, **kw) for x in v]


def _validate_knobs(raw: dict, dim: int) -> Knobs:
    unknown = set(raw) - KNOB_NAMES
    if unknown:
        raise ConfigError(f"unknown key knobs.{sorted(unknown)[0]}")
    k = dict(asdict(Knobs()))
    k.update(raw)
    out = {
        "tol": _num("tol", k["tol"], 0, 1, lo_open=True),
        "count": _num("count", k["count"], 0, 1e8, integer=True),
        "max_n": "auto" if _is_auto(k["max_n"]) else _num("max_n", k["max_n"], 1, integer=True),
        "n": _num("n", k["n"], 1, 1e6, integer=True),
        "trials": _num("trials", k["trials"], 1, 1e8, integer=True),
        "n_grid": _num_list("n_grid", k["n_grid"], lo=0, integer=True),
        "epsilon": _num("epsilon", k["epsilon"], 0, lo_open=True),
        "min_exceed": _num("min_exceed", k["min_exceed"], 1, integer=True),
        "sigma": _num("sigma", k["sigma"], 0, lo_open=True),
        "eval_count": _num("eval_count", k["eval_count"], 10, 1e8, integer=True),
        "L": _num("L", k["L"], 1, lo_open=True),
        "t_grid": _num_list("t_grid", k["t_grid"]),
        "t_max": _num("t_max", k["t_max"], 0, lo_open=True),
        "R": _num("R", k["R"], 0, lo_open=True),
        "truncation_ceiling": _num("truncation_ceiling", k["truncation_ceiling"], 0, 1),
    }
    if k["variant"] not in ("factorwise", "product"):
        raise ConfigError(f"knobs.variant: expected factorwise or product, got {k['variant']!r}")
    out["variant"] = k["variant"]
    for key in ("start", "center"):
        v = k[key]
        if _is_auto(v):
            out[key] = "auto"
        else:
            out[key] = _num_list(key, v)
            if len(out[key]) != dim:
                raise ConfigError(f"knobs.{key}: expected {dim} coordinates")
    out["radii"] = "auto" if _is_auto(k["radii"]) else _num_list("radii", k["radii"], lo=0, lo_open=True)
    if out["radii"] != "auto" and any(b <= a for a, b in zip(out["radii"], out["radii"][1:])):
        raise ConfigError("knobs.radii: must be increasing")
    out["x_grid"] = "auto" if _is_auto(k["x_grid"]) else _num_list("x_grid", k["x_grid"])
    return Knobs(**out)


def _validate_maps(raw) -> tuple:
    if not isinstance(raw, list) or not raw:
        raise ConfigError("maps: expected a non-empty array of tables")
    out = []
    for i, m in enumerate(raw):
        if not isinstance(m, dict):
            raise ConfigError(f"maps[{i}]: expected a table")
        kind = m.get("kind")
        if kind not in MAP_KEYS:
            raise ConfigError(f"maps[{i}].kind: expected one of {sorted(MAP_KEYS)}, got {kind!r}")
        unknown = set(m) - MAP_KEYS[kind]
        if unknown:
            raise ConfigError(f"unknown key maps[{i}].{sorted(unknown)[0]}")
        missing = MAP_KEYS[kind] - set(m)
        if missing:
            raise ConfigError(f"maps[{i}]: missing key {sorted(missing)[0]}")
        try:
            build_map(m)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"maps[{i}]: {exc}") from None
        w = m["weight"]
        if isinstance(w, bool) or not isinstance(w, (int, float)) or not 0 < w <= 1:
            raise ConfigError(f"maps[{i}].weight: must lie in (0, 1]")
        out.append(dict(m))
    total = math.fsum(m["weight"] for m in out)
    if abs(total - 1.0) > WEIGHT_TOL:
        raise ConfigError(f"maps: weights sum ≠ 1 (sum is {total!r})")
    return tuple(out)


def _validate_preset(raw) -> tuple:
    if not isinstance(raw, dict) or "name" not in raw:
        raise ConfigError("preset: expected a table with a name")
    name = raw["name"]
    if name not in PRESET_NAMES:
        raise ConfigError(f"preset.name: unknown preset {name!r}")
    unknown = set(raw) - {"name"} - PRESET_PARAMS.get(name, set())
    if unknown:
        raise ConfigError(f"unknown key preset.{sorted(unknown)[0]}")
    try:
        mu = preset(name, **{k: v for k, v in raw.items() if k != "name"})
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"preset: {exc}") from None
    return dict(raw), mu.dim


def config_from_dict(doc: dict) -> ExperimentConfig:
    allowed = {"experiment", "seed", "space_dim", "preset", "maps", "knobs"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]}")
    experiment = doc.get("experiment", "chi")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment: expected one of {', '.join(EXPERIMENTS)}, got {experiment!r}")
    seed = doc.get("seed", 12345)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed: expected an integer in [0, 2^64)")
    if ("preset" in doc) == ("maps" in doc):
        raise ConfigError("exactly one of preset or maps is required")
    preset_doc, maps = None, None
    if "preset" in doc:
        preset_doc, dim = _validate_preset(doc["preset"])
    else:
        maps = _validate_maps(doc["maps"])
        dim = build_map(maps[0]).dim
    space_dim = doc.get("space_dim", dim)
    if isinstance(space_dim, bool) or not isinstance(space_dim, int) or space_dim < 1:
        raise ConfigError("space_dim: expected a positive integer")
    if space_dim != dim:
        raise ConfigError(f"space_dim: {space_dim} does not match the maps' dimension {dim}")
    knobs_raw = doc.get("knobs", {})
    if not isinstance(knobs_raw, dict):
        raise ConfigError("knobs: expected a table")
    return ExperimentConfig(experiment, int(seed), int(space_dim), preset_doc, maps,
                            _validate_knobs(knobs_raw, dim))


def parse_config(document: str) -> ExperimentConfig:
    """Parse and validate a TOML document; defaults are filled in."""
    try:
        doc = tomllib.loads(document)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    return config_from_dict(doc)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = {"experiment": cfg.experiment, "seed": cfg.seed, "space_dim": cfg.space_dim}
    if cfg.preset is not None:
        doc["preset"] = dict(cfg.preset)
    else:
        doc["maps"] = [dict(m) for m in cfg.maps]
    doc["knobs"] = asdict(cfg.knobs)
    return doc


def render_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))

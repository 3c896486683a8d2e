"""Experiment orchestration: config in, CSV / key-value files plus a manifest out."""

from __future__ import annotations

import hashlib
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import entropy, measure, sampler, tails
from .config import ExperimentConfig, render_config
from .presets import isprime

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FLAGGED = 2

OUT_ENV = "STATTAIL_OUT"


@dataclass
class RunResult:
    status: int
    files: Dict[str, str] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    resolved: Optional[ExperimentConfig] = None

    def flag(self, note: str) -> None:
        self.status = max(self.status, EXIT_FLAGGED)
        self.notes.append(note)


def kv(pairs: dict) -> str:
    lines = []
    for key, value in pairs.items():
        if isinstance(value, float):
            value = format_float(value)
        elif isinstance(value, (list, tuple, np.ndarray)):
            value = ";".join(format_float(float(v)) for v in value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def format_float(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.10g}"


def _start(cfg: ExperimentConfig) -> np.ndarray:
    k = cfg.knobs
    return np.zeros(cfg.space_dim) if k.start == "auto" else np.array(k.start, dtype=float)


def _max_n(cfg):
    return None if cfg.knobs.max_n == "auto" else cfg.knobs.max_n


def _samples(cfg, mu, res: RunResult, threads, count=None):
    k = cfg.knobs
    s = sampler.sample_batch(mu, _start(cfg), k.tol, k.count if count is None else count,
                             _max_n(cfg), cfg.seed, threads=threads,
                             truncation_ceiling=k.truncation_ceiling)
    if not s.valid:
        res.flag(f"truncated fraction {s.truncated_fraction:.3g} exceeds ceiling {k.truncation_ceiling:g}")
    return s


def _run_chi(cfg, mu, res, threads):
    chi, err = measure.contraction_rate_with_error(mu)
    res.files["result.txt"] = kv({"chi": f"{chi:.9f}", "chi_error": err})


def _run_moment(cfg, mu, res, threads):
    rows = ["t,value,diverges,witness,error"]
    for t in cfg.knobs.t_grid:
        m = measure.moment(mu, t)
        w = "" if m.witness is None else str(m.witness)
        rows.append(f"{t!r},{format_float(m.value)},{int(m.diverges)},{w},{m.error!r}")
    res.files["moment.csv"] = "\n".join(rows) + "\n"


def _run_lyapunov(cfg, mu, res, threads):
    k = cfg.knobs
    est, se = measure.lyapunov_estimate(mu, k.n, k.trials, cfg.seed, threads=threads)
    res.files["result.txt"] = kv({"lyapunov": est, "stderr": se, "n": k.n, "trials": k.trials,
                                  "chi": measure.contraction_rate(mu)})


def _run_sample(cfg, mu, res, threads):
    s = _samples(cfg, mu, res, threads)
    res.files["samples.csv"] = s.to_csv()
    res.files["sample_summary.txt"] = kv({
        "count": len(s), "truncated_fraction": s.truncated_fraction, "valid": int(s.valid),
        "max_n": s.max_n, "truncation_mass": s.truncation_mass, "measure_id": s.measure_id})


def _run_tail(cfg, mu, res, threads):
    k = cfg.knobs
    s = _samples(cfg, mu, res, threads)
    center = tails.default_center(mu, s) if k.center == "auto" else np.array(k.center)
    radii = tails.geometric_radii(s, center) if k.radii == "auto" else np.array(k.radii)
    res.resolved = replace(cfg, knobs=replace(k, radii=[float(r) for r in radii],
                                              center=[float(c) for c in center]))
    if radii.size == 0:
        res.flag("InsufficientTailData: no positive distances from the center")
        res.files["fit.txt"] = kv({"error": "InsufficientTailData"})
        return
    curve = tails.empirical_tail(s, center, radii)
    res.files["tail.csv"] = curve.to_csv()
    try:
        fit = tails.fit_tail_exponent(curve, k.min_exceed)
    except tails.InsufficientTailData as exc:
        res.flag(f"InsufficientTailData: {exc}")
        res.files["fit.txt"] = kv({"error": "InsufficientTailData"})
        return
    res.files["fit.txt"] = fit.to_text()


def _run_ldp(cfg, mu, res, threads):
    k = cfg.knobs
    curve = tails.ldp_empirical(mu, k.epsilon, k.n_grid, k.trials, cfg.seed, k.variant,
                                threads=threads)
    res.files["ldp.csv"] = curve.to_csv()
    out = {"variant": curve.variant.value, "epsilon": curve.epsilon, "reference": curve.reference}
    try:
        delta, se = tails.ldp_rate_fit(curve)
        out.update(delta_hat=delta, stderr=se)
    except tails.InsufficientLdpData as exc:
        res.flag(f"InsufficientLdpData: {exc}")
    for key, value in curve.metadata.items():
        out[key] = value
    res.files["ldp_fit.txt"] = kv(out)


def _run_rate(cfg, mu, res, threads):
    k = cfg.knobs
    if k.x_grid == "auto":
        lr = mu.log_rhos()
        grid = np.linspace(lr.min(), lr.max(), 41)
        res.resolved = replace(cfg, knobs=replace(k, x_grid=[float(x) for x in grid]))
    else:
        grid = np.array(k.x_grid)
    rf = measure.rate_function(mu, grid, k.t_max)
    rows = ["x,I"] + [f"{x!r},{format_float(v)}" for x, v in zip(rf.grid, rf.values)]
    res.files["rate.csv"] = "\n".join(rows) + "\n"


def _run_entropy(cfg, mu, res, threads):
    k = cfg.knobs
    s = _samples(cfg, mu, res, threads)
    H, se = entropy.smoothed_entropy(s, k.sigma, k.eval_count, cfg.seed, threads=threads)
    center = np.zeros(cfg.space_dim) if k.center == "auto" else np.array(k.center)
    smoothed = entropy.smoothed_points(s, k.sigma, cfg.seed ^ 0x5EED)
    bound = entropy.annulus_bound(smoothed, center, k.L)
    if not bound.reliable:
        res.flag(f"annulus bound unreliable: leftover mass {bound.leftover_mass:.3g}")
    res.files["entropy.txt"] = kv({
        "H_hat": H, "stderr": se, "annulus_bound": bound.value, "L": k.L,
        "leftover_mass": bound.leftover_mass,
        "annulus_bound_without_unit_ball": bound.value_without_unit_ball,
        "unit_ball_mass": bound.metadata["unit_ball_mass"], "sigma": k.sigma})


def _run_lowerbound(cfg, mu, res, threads):
    res.files["lowerbound.txt"] = tails.lower_bound_exponent(mu).to_text()


def _run_diagnose(cfg, mu, res, threads):
    k = cfg.knobs
    x = _start(cfg)
    center = None if k.center == "auto" else np.array(k.center)
    diag = tails.convergence_diagnostic(mu, x, k.R, k.n_grid, k.trials, cfg.seed, center=center,
                                        threads=threads)
    res.files["diagnose.csv"] = diag.to_csv()
    res.files["diagnose.txt"] = kv({
        "theta_hat": "BelowNoise" if diag.theta_hat is None else format_float(diag.theta_hat),
        "below_noise_at_last_n": int(diag.below_noise), "reference_mean": diag.reference_mean})


RUNNERS = {
    "chi": _run_chi, "moment": _run_moment, "lyapunov": _run_lyapunov, "sample": _run_sample,
    "tail": _run_tail, "ldp": _run_ldp, "rate": _run_rate, "entropy": _run_entropy,
    "lowerbound": _run_lowerbound, "diagnose": _run_diagnose,
}


def compute(cfg: ExperimentConfig, threads: Optional[int] = None) -> RunResult:
    """Run the configured pipeline in memory; errors propagate."""
    res = RunResult(EXIT_OK)
    if cfg.preset and cfg.preset.get("name") == "prime_q" and not isprime(int(cfg.preset.get("q", 5))):
        res.notes.append(f"q={cfg.preset['q']} is composite")
    mu = cfg.measure()
    RUNNERS[cfg.experiment](cfg, mu, res, threads)
    if res.resolved is None:
        res.resolved = cfg
    return res


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "stattail-out"))


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: Optional[int] = None) -> int:
    """Run, write outputs and ``manifest.txt``; returns the process exit status."""
    out = Path(out_dir) if out_dir is not None else default_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        res = compute(cfg, threads)
        message = "; ".join(res.notes) or "ok"
    except Exception as exc:  # rendered as a single diagnostic line
        res = RunResult(EXIT_ERROR)
        message = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        log.error(message)
    wall = time.perf_counter() - t0
    for name, text in res.files.items():
        _write(out / name, text)
    config_text = render_config(res.resolved or cfg)
    _write(out / "config.toml", config_text)
    manifest = {
        "experiment": cfg.experiment,
        "status": res.status,
        "message": message,
        "seed": cfg.seed,
        "threads": threads if threads is not None else "default",
        "wall_time_s": f"{wall:.3f}",
        "measure_sha256": _measure_hash(cfg),
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
    }
    for name in sorted(res.files):
        manifest[f"sha256.{name}"] = hashlib.sha256(res.files[name].encode()).hexdigest()
    _write(out / "manifest.txt", "".join(f"{k}={v}\n" for k, v in manifest.items()))
    return res.status


def _measure_hash(cfg) -> str:
    try:
        return cfg.measure().content_hash()
    except Exception:
        return "unavailable"

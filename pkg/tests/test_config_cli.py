import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stattail import presets
from stattail.cli import main
from stattail.config import ConfigError, Knobs, parse_config, render_config
from stattail.maps import lipschitz_constant
from stattail.measure import contraction_rate
from stattail.runner import EXIT_ERROR, EXIT_FLAGGED, EXIT_OK

PRIME_Q = '[preset]\nname = "prime_q"\nq = 5\n'


def read_kv(path):
    return dict(line.split("=", 1) for line in path.read_text().splitlines())


def run(tmp_path, experiment, doc, *extra):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(doc)
    out = tmp_path / f"out-{experiment}-{len(list(tmp_path.iterdir()))}"
    code = main([experiment, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


class TestPresets:
    def test_prime_q_atoms(self):
        mu = presets.prime_q(5)
        (g1, p1), (g2, p2) = mu.atoms
        assert (g1.matrix[0, 0], g1.translation[0], p1) == (1.25, 1.0, pytest.approx(1 / 3))
        assert (g2.matrix[0, 0], g2.translation[0], p2) == (0.625, -1.0, pytest.approx(2 / 3))

    def test_compact_and_noncompact(self):
        cf = presets.compact_flip()
        assert [(float(g.matrix[0, 0]), float(g.translation[0]), p) for g, p in cf.atoms] == [
            (0.5, 1.0, 0.5), (-1.0, 0.0, 0.5)]
        nt = presets.noncompact_translation()
        assert [(float(g.matrix[0, 0]), float(g.translation[0]), p) for g, p in nt.atoms] == [
            (0.5, 1.0, 0.5), (1.0, 1.0, 0.5)]

    def test_sequence_atoms(self):
        mu = presets.sequence_example(100)
        for n in (2, 4, 9, 10, 49, 50):
            g, p = mu.atoms[n - 1]
            k = math.isqrt(n)
            a = float(k**k) if k * k == n else 1 / n
            assert lipschitz_constant(g) == pytest.approx(a)
            assert p == pytest.approx(6 / (math.pi**2 * n * n))

    @pytest.mark.parametrize("q", [5, 7, 11, 101])
    def test_prime_q_contracting(self, q):
        assert contraction_rate(presets.prime_q(q)) < 0

    def test_invalid(self):
        with pytest.raises(ValueError):
            presets.prime_q(4)
        with pytest.raises(ValueError):
            presets.sequence_example(5)
        with pytest.raises(KeyError):
            presets.preset("nope")


class TestParse:
    def test_minimal_defaults(self):
        cfg = parse_config(PRIME_Q)
        assert cfg.experiment == "chi" and cfg.seed == 12345 and cfg.space_dim == 1
        assert cfg.knobs == Knobs()

    def test_weights_sum(self):
        doc = """
[[maps]]
kind = "affine"
weight = 0.5
matrix = [[0.5]]
translation = [0.0]
[[maps]]
kind = "affine"
weight = 0.6
matrix = [[0.5]]
translation = [1.0]
"""
        with pytest.raises(ConfigError, match="weights sum ≠ 1"):
            parse_config(doc)

    def test_unknown_keys(self):
        with pytest.raises(ConfigError, match="knobs.tolerance"):
            parse_config(PRIME_Q + "[knobs]\ntolerance = 1e-3\n")
        with pytest.raises(ConfigError, match="colour"):
            parse_config('colour = "red"\n' + PRIME_Q)
        with pytest.raises(ConfigError, match="preset.N"):
            parse_config('[preset]\nname = "prime_q"\nN = 3\n')

    def test_parse_error_position(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config('seed = 1\nexperiment = \n')

    def test_knob_ranges(self):
        with pytest.raises(ConfigError, match="knobs.tol"):
            parse_config(PRIME_Q + "[knobs]\ntol = 0\n")
        with pytest.raises(ConfigError, match="knobs.L"):
            parse_config(PRIME_Q + "[knobs]\nL = 1.0\n")
        with pytest.raises(ConfigError, match="knobs.variant"):
            parse_config(PRIME_Q + '[knobs]\nvariant = "both"\n')

    def test_dimension_check(self):
        with pytest.raises(ConfigError, match="space_dim"):
            parse_config("space_dim = 2\n" + PRIME_Q)

    def test_similarity_maps(self):
        doc = """
experiment = "chi"
[[maps]]
kind = "similarity"
weight = 1.0
scale = 0.5
rotation = [[0.0, -1.0], [1.0, 0.0]]
translation = [1.0, 0.0]
"""
        cfg = parse_config(doc)
        assert cfg.space_dim == 2
        assert contraction_rate(cfg.measure()) == pytest.approx(math.log(0.5))

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from(["chi", "tail", "ldp", "entropy"]), st.integers(0, 2**64 - 1),
           st.floats(1e-12, 1.0), st.integers(0, 10**6), st.floats(1.01, 10),
           st.lists(st.integers(1, 1000), min_size=1, max_size=5),
           st.one_of(st.just("auto"), st.lists(st.floats(-5, 5), min_size=1, max_size=1)))
    def test_round_trip(self, exp, seed, tol, count, L, grid, center):
        cfg = parse_config(PRIME_Q)
        knobs = replace(cfg.knobs, tol=tol, count=count, L=L, n_grid=grid, center=center)
        cfg = replace(cfg, experiment=exp, seed=seed, knobs=knobs)
        assert parse_config(render_config(cfg)) == cfg


class TestCli:
    def test_chi(self, tmp_path):
        code, out = run(tmp_path, "chi", PRIME_Q)
        assert code == EXIT_OK
        assert read_kv(out / "result.txt")["chi"] == "-0.238954569"
        manifest = read_kv(out / "manifest.txt")
        assert manifest["status"] == "0" and manifest["seed"] == "12345"
        assert {"measure_sha256", "config_sha256", "wall_time_s", "sha256.result.txt"} <= set(manifest)

    def test_lowerbound(self, tmp_path):
        code, out = run(tmp_path, "lowerbound", PRIME_Q)
        kv = read_kv(out / "lowerbound.txt")
        assert code == EXIT_OK
        assert kv == {"alpha_1": "4.923343212", "fixed_point": "-4", "atom": "0"}

    def test_tail_compact_support_flagged(self, tmp_path):
        doc = '[preset]\nname = "single_contraction"\n[knobs]\ncount = 1000\n'
        code, out = run(tmp_path, "tail", doc)
        assert code == EXIT_FLAGGED
        assert "InsufficientTailData" in read_kv(out / "manifest.txt")["message"]

    def test_tail_echoes_resolved_radii(self, tmp_path):
        code, out = run(tmp_path, "tail", PRIME_Q + "[knobs]\ncount = 20000\n")
        assert code == EXIT_OK
        echoed = parse_config((out / "config.toml").read_text())
        assert isinstance(echoed.knobs.radii, list) and len(echoed.knobs.radii) >= 3
        r = np.array(echoed.knobs.radii)
        np.testing.assert_allclose(r[1:] / r[:-1], math.sqrt(2))
        assert echoed.knobs.center == [-4.0]
        fit = read_kv(out / "fit.txt")
        assert 0 < float(fit["alpha_hat"]) < 10

    def test_error_exit(self, tmp_path):
        code, out = run(tmp_path, "sample", '[preset]\nname = "shear_matrix"\n[knobs]\ncount = 10\n')
        assert code == EXIT_ERROR
        msg = read_kv(out / "manifest.txt")["message"]
        assert msg.startswith("NonContracting") and "\n" not in msg

    def test_bad_config_exit(self, tmp_path, capsys):
        code, _ = run(tmp_path, "chi", PRIME_Q + "bogus = 1\n")
        assert code == EXIT_ERROR
        assert "bogus" in capsys.readouterr().err

    def test_composite_q_note(self, tmp_path):
        code, out = run(tmp_path, "chi", '[preset]\nname = "prime_q"\nq = 9\n')
        assert code == EXIT_OK
        assert "composite" in read_kv(out / "manifest.txt")["message"]

    def test_seed_override(self, tmp_path):
        doc = PRIME_Q + "[knobs]\ncount = 100\n"
        _, a = run(tmp_path, "sample", doc, "--seed", "7")
        _, b = run(tmp_path, "sample", doc.replace("[preset]", "seed = 7\n[preset]"))
        assert (a / "samples.csv").read_bytes() == (b / "samples.csv").read_bytes()
        assert read_kv(a / "manifest.txt")["seed"] == "7"

    def test_entropy_outputs(self, tmp_path):
        doc = PRIME_Q + "[knobs]\ncount = 2000\neval_count = 2000\n"
        code, out = run(tmp_path, "entropy", doc)
        kv = read_kv(out / "entropy.txt")
        assert code == EXIT_OK
        assert {"H_hat", "stderr", "annulus_bound", "L", "leftover_mass",
                "annulus_bound_without_unit_ball"} <= set(kv)
        assert float(kv["annulus_bound"]) >= float(kv["H_hat"]) - 3 * float(kv["stderr"])

    @pytest.mark.parametrize("experiment,knobs,files", [
        ("moment", "", ["moment.csv"]),
        ("lyapunov", "n = 50\ntrials = 1000\n", ["result.txt"]),
        ("rate", "", ["rate.csv"]),
        ("ldp", "trials = 2000\nn_grid = [5, 10, 20]\n", ["ldp.csv", "ldp_fit.txt"]),
        ("diagnose", "trials = 1000\nn_grid = [1, 5, 10]\n", ["diagnose.csv", "diagnose.txt"]),
    ])
    def test_every_experiment_runs(self, tmp_path, experiment, knobs, files):
        code, out = run(tmp_path, experiment, PRIME_Q + "[knobs]\n" + knobs)
        assert code == EXIT_OK
        for name in files + ["manifest.txt", "config.toml"]:
            assert (out / name).is_file()

    def test_moment_sequence(self, tmp_path):
        doc = '[preset]\nname = "sequence_example"\nN = 100\n[knobs]\nt_grid = [0.5, -0.5]\n'
        code, out = run(tmp_path, "moment", doc)
        rows = (out / "moment.csv").read_text().splitlines()
        assert code == EXIT_OK and rows[0] == "t,value,diverges,witness,error"
        assert rows[1].split(",")[2] == "1" and rows[2].split(",")[2] == "0"

    def test_reproducible_across_threads(self, tmp_path):
        doc = PRIME_Q + "[knobs]\ncount = 140000\n"
        _, a = run(tmp_path, "sample", doc, "--threads", "1")
        _, b = run(tmp_path, "sample", doc, "--threads", "4")
        assert (a / "samples.csv").read_bytes() == (b / "samples.csv").read_bytes()

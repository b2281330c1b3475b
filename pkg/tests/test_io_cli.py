import csv
import json
import math

import numpy as np
import pytest

from rarma2d import io
from rarma2d.cli import main
from rarma2d.simulation import SCENARIOS

PHI10 = "--phi=0.4562,0.4523,-0.1054"


class TestFormats:
    def test_csv_round_trip_is_lossless(self, tmp_path, rng):
        grid = rng.rayleigh(1.0, (7, 5)) * 10.0 ** rng.integers(-8, 8, (7, 5))
        path = tmp_path / "g.csv"
        io.write_csv(path, grid)
        assert path.read_text().splitlines()[0] == "7,5"
        assert io.read_csv(path).tobytes() == grid.tobytes()

    def test_csv_count_mismatch(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("2,2\n1,2\n3\n")
        with pytest.raises(ValueError):
            io.read_csv(path)

    @pytest.mark.parametrize("maxval", [255, 65535])
    @pytest.mark.parametrize("binary", [True, False])
    def test_pgm_round_trip(self, tmp_path, rng, maxval, binary):
        pixels = rng.integers(0, maxval + 1, (6, 9))
        path = tmp_path / "img.pgm"
        io.write_pgm(path, pixels, maxval=maxval, binary=binary)
        np.testing.assert_array_equal(io.read_pgm(path, normalize=False), pixels)
        amp = io.read_pgm(path)
        np.testing.assert_allclose(amp, (pixels + 1) / (maxval + 1), rtol=1e-15)
        assert amp.min() > 0 and amp.max() <= 1

    def test_pgm_comments_and_dispatch(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_text("P2\n# a comment\n2 1\n# another\n3\n0 3\n")
        np.testing.assert_allclose(io.read_matrix(path), [[0.25, 1.0]])

    def test_mask_pgm_is_bilevel(self, tmp_path):
        bits = np.zeros((3, 4), dtype=bool)
        bits[1, 2] = True
        path = tmp_path / "m.pgm"
        io.write_mask_pgm(path, bits)
        raw = io.read_pgm(path, normalize=False)
        assert set(np.unique(raw)) == {0, 255} and raw[1, 2] == 255


def run(*args):
    return main([str(a) for a in args])


def simulate(tmp_path, name="f.csv", seed=7, rows=80, cols=80):
    out = tmp_path / name
    code = run("simulate", "--order", "1,0", "--rows", rows, "--cols", cols,
               "--beta", "-0.2031", PHI10, "--seed", seed, "--out", out)
    assert code == 0
    return out


class TestSimulate:
    def test_deterministic(self, tmp_path, capsys):
        a = simulate(tmp_path, "a.csv")
        b = simulate(tmp_path, "b.csv")
        assert a.read_bytes() == b.read_bytes()
        assert io.read_csv(a).shape == (80, 80)
        echo, _ = json.JSONDecoder().raw_decode(capsys.readouterr().out)
        assert echo["parameters"]["phi(0,1)"] == 0.4562

    def test_parameter_count_mismatch_is_usage_error(self, tmp_path):
        assert run("simulate", "--order", "1,0", "--phi", "0.1,0.2",
                   "--out", tmp_path / "x.csv") == 2

    def test_pure_rayleigh_without_phi(self, tmp_path):
        out = tmp_path / "iid.csv"
        assert run("simulate", "--order", "0,0", "--rows", 30, "--cols", 40, "--out", out) == 0
        y = io.read_csv(out)
        assert y.shape == (30, 40) and np.all(y > 0)

    def test_bad_order_flag(self, tmp_path, capsys):
        assert run("simulate", "--order", "x", "--out", tmp_path / "x.csv") == 2
        assert "--order" in capsys.readouterr().err

    def test_preview(self, tmp_path):
        out, pre = tmp_path / "f.csv", tmp_path / "f.pgm"
        assert run("simulate", "--rows", 10, "--cols", 12, "--out", out, "--preview", pre) == 0
        assert io.read_pgm(pre, normalize=False).shape == (10, 12)


class TestFit:
    def test_report_layout_and_recovery(self, tmp_path):
        field = simulate(tmp_path)
        report_path = tmp_path / "fit.json"
        assert run("fit", "--input", field, "--order", "1,0", "--out", report_path,
                   "--mu", tmp_path / "mu.csv", "--residuals", tmp_path / "r.csv") == 0
        report = json.loads(report_path.read_text())
        assert len(report["parameters"]) == 4  # (p+1)^2 + (q+1)^2 - 1
        assert report["converged"] is True
        truth = SCENARIOS["rarma10"].gamma_true.to_array()
        for row, t in zip(report["parameters"], truth):
            assert abs(row["estimate"] - t) <= 4 * row["se"]
        assert report["wald_overall"]["df"] == 3
        assert io.read_csv(tmp_path / "mu.csv").shape == (79, 79)
        assert io.read_csv(tmp_path / "r.csv").shape == (79, 79)

    def test_parameter_count_for_rarma11(self, tmp_path):
        field = simulate(tmp_path, rows=30, cols=30)
        out = tmp_path / "fit.json"
        assert run("fit", "--input", field, "--order", "1,1", "--out", out) == 0
        assert len(json.loads(out.read_text())["parameters"]) == 7

    def test_closed_form_at_order_zero(self, tmp_path):
        out = tmp_path / "iid.csv"
        run("simulate", "--order", "0,0", "--rows", 25, "--cols", 25, "--seed", 3, "--out", out)
        report_path = tmp_path / "fit.json"
        assert run("fit", "--input", out, "--order", "0,0", "--out", report_path) == 0
        report = json.loads(report_path.read_text())
        y = io.read_csv(out)
        assert report["closed_form_mu"] == pytest.approx(
            math.sqrt(math.pi * np.sum(y**2) / (4 * y.size)), rel=1e-12)
        assert report["fitted_mu"] == pytest.approx(report["closed_form_mu"], rel=1e-6)
        assert report["wald_overall"] is None

    def test_unreadable_input(self, tmp_path):
        assert run("fit", "--input", tmp_path / "missing.csv") == 1
        garbage = tmp_path / "garbage.csv"
        garbage.write_text("not a matrix")
        assert run("fit", "--input", garbage) == 1

    def test_nonconvergence_still_succeeds(self, tmp_path):
        field = simulate(tmp_path, rows=30, cols=30)
        out = tmp_path / "fit.json"
        assert run("fit", "--input", field, "--order", "1,1", "--max-iter", 1, "--out", out) == 0
        assert json.loads(out.read_text())["converged"] is False

    def test_residuals_subcommand(self, tmp_path):
        field = simulate(tmp_path, rows=40, cols=40)
        summary = tmp_path / "s.json"
        assert run("residuals", "--input", field, "--order", "1,0", "--out", tmp_path / "r.csv",
                   "--summary", summary) == 0
        s = json.loads(summary.read_text())
        assert s["cells"] == 39 * 39
        assert s["nominal_rate"] == pytest.approx(0.0026997960632601866, rel=1e-9)


class TestDetect:
    def test_unreachable_limit_gives_empty_mask(self, tmp_path):
        field = simulate(tmp_path, rows=40, cols=40)
        outdir = tmp_path / "det"
        assert run("detect", "--input", field, "--roi", "0,0,20,40", "--order", "1,0",
                   "--limit", "1e9", "--outdir", outdir) == 0
        assert not io.read_pgm(outdir / "mask.pgm", normalize=False).any()
        rotations = json.loads((outdir / "rotations.json").read_text())
        assert [r["rotation_degrees"] for r in rotations] == [0, 90, 180, 270]
        assert all("p_value" in r["wald_overall"] for r in rotations)
        quality = json.loads((outdir / "quality.json").read_text())
        assert quality["mse"] > 0 and quality["mape"] > 0

    def test_morph_none_emits_union(self, tmp_path):
        field = simulate(tmp_path, rows=40, cols=40)
        outdir = tmp_path / "det"
        assert run("detect", "--input", field, "--roi", "0,0,20,40", "--order", "1,0",
                   "--morph", "none", "--limit", "2", "--outdir", outdir) == 0
        mask = io.read_pgm(outdir / "mask.pgm", normalize=False)
        union = io.read_pgm(outdir / "union.pgm", normalize=False)
        np.testing.assert_array_equal(mask, union)
        assert union.any()

    def test_roi_out_of_bounds(self, tmp_path):
        field = simulate(tmp_path, rows=20, cols=20)
        assert run("detect", "--input", field, "--roi", "10,10,15,15",
                   "--outdir", tmp_path / "d") == 2

    def test_bad_morph(self, tmp_path):
        field = simulate(tmp_path, rows=20, cols=20)
        assert run("detect", "--input", field, "--roi", "0,0,10,10", "--morph", "open:4",
                   "--outdir", tmp_path / "d") == 2


class TestMonteCarlo:
    def test_single_replication(self, tmp_path):
        out = tmp_path / "mc.csv"
        assert run("montecarlo", "--scenario", "rarma10", "--sizes", "20", "--reps", 1,
                   "--out", out) == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 6
        assert {float(r["CR"]) for r in rows[:4]} <= {0.0, 1.0}

    def test_custom_requires_order(self):
        assert run("montecarlo", "--scenario", "custom", "--reps", 1) == 2


class TestConfig:
    def test_precedence(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"simulate": {"rows": 12, "cols": 9, "seed": 5}}))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run("--config", cfg, "simulate", "--out", a) == 0
        assert io.read_csv(a).shape == (12, 9)
        assert run("--config", cfg, "simulate", "--rows", 4, "--out", b) == 0
        assert io.read_csv(b).shape == (4, 9)

    def test_missing_config(self, tmp_path):
        assert run("--config", tmp_path / "none.json", "simulate") == 1

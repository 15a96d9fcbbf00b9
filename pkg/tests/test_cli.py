import json

import numpy as np
import pytest

from dicgan import fields as flds
from dicgan.cli import canonical_json, config_hash, run_command


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture()
def synth_spec(tmp_path):
    return write(tmp_path / "synth.json",
                 {"count": 12, "grid": 16, "noise_sigma": 0.02, "bias_amp": 0.05})


@pytest.fixture()
def run_config(tmp_path):
    return write(tmp_path / "run.json", {
        "seed": 0,
        "data": {"synth": {"count": 16, "grid": 16, "seed": 1}},
        "train": {"epochs": 1, "batch_size": 8},
        "swd": {"n_slices": 16, "repeats": 2},
        "gs": {"n_sets": 4, "landmark_size": 8, "i_max": 10},
    })


@pytest.fixture()
def trained_run(tmp_path, run_config):
    out = tmp_path / "run_out"
    assert run_command(["train", "--config", run_config, "--out", str(out)]) == 0
    return out


class TestSynthIngestStrain:
    def test_synth_writes_dataset(self, tmp_path, synth_spec):
        out = tmp_path / "ds.ftc"
        assert run_command(["synth", "--spec", synth_spec, "--out", str(out),
                            "--seed", "3"]) == 0
        ds = flds.load_dataset(out)
        assert len(ds) == 12 and ds.resolution == (16, 16)

    def test_synth_deterministic_bytes(self, tmp_path, synth_spec):
        a, b = tmp_path / "a.ftc", tmp_path / "b.ftc"
        run_command(["synth", "--spec", synth_spec, "--out", str(a), "--seed", "3"])
        run_command(["synth", "--spec", synth_spec, "--out", str(b), "--seed", "3"])
        assert a.read_bytes() == b.read_bytes()

    def test_synth_missing_spec(self, tmp_path):
        assert run_command(["synth", "--spec", str(tmp_path / "no.json"),
                            "--out", str(tmp_path / "x.ftc")]) == 4

    def test_ingest_and_bad_csv(self, tmp_path):
        csv = tmp_path / "pts.csv"
        rows = ["x_mm,y_mm,ux_mm,uy_mm"]
        gen = np.random.default_rng(0)
        for x, y in gen.uniform(0, 5, (40, 2)):
            rows.append(f"{x},{y},{x * 0.1},{y * 0.1}")
        csv.write_text("\n".join(rows) + "\n")
        out = tmp_path / "g.ftc"
        assert run_command(["ingest", "--csv", str(csv), "--grid", "8",
                            "--extent", "5.0", "--out", str(out)]) == 0
        assert flds.load_ftc(out)["u"].shape == (1, 2, 8, 8)
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        assert run_command(["ingest", "--csv", str(bad), "--grid", "8",
                            "--extent", "5.0", "--out", str(out)]) == 4

    def test_strain_outputs(self, tmp_path, synth_spec):
        ds = tmp_path / "ds.ftc"
        run_command(["synth", "--spec", synth_spec, "--out", str(ds), "--seed", "0"])
        out = tmp_path / "strain.ftc"
        csv_dir = tmp_path / "strain_csv"
        assert run_command(["strain", "--input", str(ds), "--out", str(out),
                            "--csv", str(csv_dir)]) == 0
        tensors = flds.load_ftc(out)
        assert set(tensors) == {"eps_xx", "eps_yy", "eps_xy", "eps_vm"}
        assert tensors["eps_vm"].shape == (12, 16, 16)
        assert np.all(tensors["eps_vm"] > 0)
        assert (csv_dir / "field_0000.csv").exists()


class TestUsageAndConfig:
    def test_no_command_is_usage_error(self):
        assert run_command([]) == 2

    def test_unknown_command(self):
        assert run_command(["frobnicate"]) == 2

    def test_schema_violation(self, tmp_path):
        cfg = write(tmp_path / "bad.json", {"seed": "zero", "data": {"synth": {}}})
        assert run_command(["train", "--config", cfg]) == 3

    def test_missing_data_source(self, tmp_path):
        cfg = write(tmp_path / "nodata.json", {"seed": 0, "data": {}})
        assert run_command(["train", "--config", cfg]) == 3

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{not json")
        assert run_command(["train", "--config", str(p)]) == 3

    def test_config_hash_is_canonical(self):
        a = {"b": 1, "a": {"y": 2, "x": 3}}
        b = {"a": {"x": 3, "y": 2}, "b": 1}
        assert canonical_json(a) == canonical_json(b)
        assert config_hash(a) == config_hash(b)


class TestTrainSampleEval:
    def test_train_artifacts(self, trained_run):
        names = {p.name for p in trained_run.iterdir()}
        assert {"resolved_config.json", "checkpoint_classical.ftc",
                "checkpoint_classical.json", "losses_classical.csv",
                "timing_classical.json"} <= names
        resolved = json.loads((trained_run / "resolved_config.json").read_text())
        assert resolved["strain"]["strain_norm"] > 0
        assert resolved["train"]["collapse_tau"] > 0
        stored = resolved.pop("config_hash")
        assert stored == config_hash(resolved)

    def test_train_determinism_excluding_timing(self, tmp_path, run_config):
        a, b = tmp_path / "r1", tmp_path / "r2"
        assert run_command(["train", "--config", run_config, "--out", str(a)]) == 0
        assert run_command(["train", "--config", run_config, "--out", str(b)]) == 0
        for name in ("checkpoint_classical.ftc", "checkpoint_classical.json",
                     "losses_classical.csv", "resolved_config.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_physics_flag_changes_tag(self, tmp_path, run_config):
        out = tmp_path / "phys"
        assert run_command(["train", "--config", run_config, "--out", str(out),
                            "--physics-guided", "on"]) == 0
        assert (out / "checkpoint_physics.ftc").exists()

    def test_sample_from_checkpoint(self, tmp_path, trained_run):
        out = tmp_path / "fake.ftc"
        assert run_command(["sample", "--checkpoint",
                            str(trained_run / "checkpoint_classical"),
                            "--count", "6", "--seed", "2", "--out", str(out)]) == 0
        u = flds.load_ftc(out)["u"]
        assert u.shape == (6, 2, 16, 16)
        assert np.abs(u).max() <= 1.0

    def test_eval_swd_identical_is_zero(self, tmp_path, synth_spec):
        ds = tmp_path / "ds.ftc"
        run_command(["synth", "--spec", synth_spec, "--out", str(ds), "--seed", "1"])
        out = tmp_path / "swd.json"
        csv = tmp_path / "swd_reps.csv"
        assert run_command(["eval", "swd", "--real", str(ds), "--fake", str(ds),
                            "--out", str(out), "--csv", str(csv),
                            "--slices", "16", "--repeats", "2"]) == 0
        rep = json.loads(out.read_text())
        assert rep["mean"] == 0.0 and all(v == 0.0 for v in rep["per_level"])
        assert csv.read_text().startswith("rep,resolution,swd")

    def test_eval_swd_size_mismatch(self, tmp_path, synth_spec):
        a, b = tmp_path / "a.ftc", tmp_path / "b.ftc"
        run_command(["synth", "--spec", synth_spec, "--out", str(a), "--seed", "1"])
        spec2 = write(tmp_path / "s2.json", {"count": 5, "grid": 16})
        run_command(["synth", "--spec", spec2, "--out", str(b), "--seed", "1"])
        assert run_command(["eval", "swd", "--real", str(a), "--fake", str(b),
                            "--out", str(tmp_path / "o.json")]) == 4

    def test_eval_gs_identical_is_zero(self, tmp_path, synth_spec):
        ds = tmp_path / "ds.ftc"
        run_command(["synth", "--spec", synth_spec, "--out", str(ds), "--seed", "1"])
        out = tmp_path / "gs.json"
        assert run_command(["eval", "gs", "--real", str(ds), "--fake", str(ds),
                            "--out", str(out), "--n-sets", "3",
                            "--landmarks", "6", "--i-max", "10"]) == 0
        rep = json.loads(out.read_text())
        assert rep["gs"] == 0.0
        assert sum(rep["mrlt_real"]) == pytest.approx(1.0)


class TestReport:
    def make_swd(self, trained_run):
        ds = trained_run / ".." / "real.ftc"
        run_command(["synth", "--spec", write(trained_run / "syn.json",
                                              {"count": 16, "grid": 16}),
                     "--out", str(ds), "--seed", "1"])
        run_command(["eval", "swd", "--real", str(ds), "--fake", str(ds),
                     "--out", str(trained_run / "swd.json"),
                     "--slices", "8", "--repeats", "1"])

    def test_report_with_swd_only(self, trained_run):
        self.make_swd(trained_run)
        assert run_command(["report", "--run", str(trained_run)]) == 0
        rep = json.loads((trained_run / "metrics_report.json").read_text())
        assert rep["gs"] is None and rep["swd"]["mean"] == 0.0
        assert rep["collapse_stat"] is not None
        assert (trained_run / "swd_levels.csv").exists()

    def test_report_without_artifacts(self, trained_run):
        assert run_command(["report", "--run", str(trained_run)]) == 4

    def test_report_tampered_config(self, trained_run):
        self.make_swd(trained_run)
        p = trained_run / "resolved_config.json"
        cfg = json.loads(p.read_text())
        cfg["seed"] = 999
        p.write_text(json.dumps(cfg))
        assert run_command(["report", "--run", str(trained_run)]) == 3

    def test_report_missing_run(self, tmp_path):
        assert run_command(["report", "--run", str(tmp_path / "nope")]) == 4


class TestCompare:
    def test_compare_report_shape(self, tmp_path):
        cfg = write(tmp_path / "cmp.json", {
            "seed": 0,
            "data": {"synth": {"count": 32, "grid": 16, "seed": 2}},
            "train": {"epochs": 1, "batch_size": 8},
            "swd": {"n_slices": 8, "repeats": 1},
            "gs": {"n_sets": 3, "landmark_size": 8, "i_max": 10},
        })
        out = tmp_path / "cmp_out"
        assert run_command(["compare", "--config", cfg, "--out", str(out)]) == 0
        rep = json.loads((out / "compare_report.json").read_text())
        assert [r["model"] for r in rep["rows"]] == ["Classical", "Physics-guided"]
        for row in rep["rows"]:
            assert np.isfinite(row["gs_x1e3"]) and np.isfinite(row["swd_x1e3"])
        assert set(rep["physics_beats_classical"]) == {"gs", "swd"}

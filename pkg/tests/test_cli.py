import json

import pytest

from psmforce import cli
from psmforce.cli import ManifestError, default_manifest, main, parse_manifest
from psmforce.evalbench import Check
from psmforce.pipeline import Method


@pytest.fixture
def manifest_file(tmp_path, tiny_manifest):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(tiny_manifest))
    return path


def run(manifest, out, *args):
    return main(["--manifest", str(manifest), "--output-dir", str(out), *args])


def test_default_manifest_is_desk_scale():
    exp, out = parse_manifest(default_manifest())
    assert exp.matrix.lengths == (229.0, 474.0, 874.0, 1013.0)
    assert (exp.matrix.nocontact_trials, exp.matrix.contact_trials) == (20, 12)
    assert exp.training["xfer"].initial_lr == 10.0
    assert exp.training["corr"].l2 == 0.01
    assert exp.grouping.arch.lstm_hidden == 128 and exp.grouping.arch.corr_window == 10
    assert out == "psmforce-out"


def test_unknown_keys_name_the_section(tiny_manifest):
    tiny_manifest["training"]["corr"]["momentum"] = 0.9
    with pytest.raises(ManifestError, match="training.corr: unknown key\\(s\\) momentum"):
        parse_manifest(tiny_manifest)
    with pytest.raises(ManifestError, match="manifest: unknown key"):
        parse_manifest({"colour": 1})


def test_invalid_value_gives_usage_exit(tmp_path, tiny_manifest, capsys):
    tiny_manifest["experiment"]["lengths"] = [474, 229]
    path = tmp_path / "m.json"
    path.write_text(json.dumps(tiny_manifest))
    assert run(path, tmp_path / "o", "generate", "--condition", "seal") == 1
    assert "experiment" in capsys.readouterr().err


def test_generate_writes_dataset(manifest_file, tmp_path, capsys):
    out = tmp_path / "o"
    assert run(manifest_file, out, "generate", "--condition", "free-space", "--duration", "100") == 0
    text = capsys.readouterr().out
    assert "2 trajectories, 500 samples" in text and "coverage" in text
    files = sorted(p.name for p in (out / "data" / "free-space").iterdir())
    assert files == ["dataset.json", "dataset_000.csv", "dataset_001.csv"]


def test_generate_is_idempotent(manifest_file, tmp_path):
    for d in ("a", "b"):
        assert run(manifest_file, tmp_path / d, "generate", "--condition", "trocar", "--duration", "30") == 0
    a = (tmp_path / "a/data/trocar/dataset_000.csv").read_bytes()
    assert a == (tmp_path / "b/data/trocar/dataset_000.csv").read_bytes()


def test_zero_duration_writes_nothing(manifest_file, tmp_path):
    out = tmp_path / "o"
    assert run(manifest_file, out, "generate", "--condition", "trocar", "--duration", "0") == 1
    assert not out.exists()


def test_corr_without_step1_is_prerequisite_error(manifest_file, tmp_path, capsys):
    assert run(manifest_file, tmp_path / "o", "train", "--method", "base-corr", "--trocar-len", "60") == 2
    assert "needs the base models" in capsys.readouterr().err


def test_train_seal_corr_and_troc(manifest_file, tmp_path, capsys):
    out = tmp_path / "o"
    for cond in ("seal", "trocar"):
        assert run(manifest_file, out, "generate", "--condition", cond) == 0
    assert run(manifest_file, out, "train", "--method", "seal") == 0
    assert run(manifest_file, out, "train", "--method", "seal-corr", "--trocar-len", "60") == 0
    d = out / "models" / "seal-corr" / "60"
    assert sorted(p.name for p in d.glob("*.psmnet")) == ["j12.psmnet", "j3.psmnet", "j4.psmnet", "j56.psmnet"]
    assert run(manifest_file, out, "train", "--method", "troc", "--trocar-len", "120") == 0
    report = json.loads((out / "models" / "troc" / "120" / "report.json").read_text())
    assert report["trocar_length_s"] == 120
    assert all(r["seconds"] > 0 and len(r["val_loss"]) == 2 for r in report["reports"])


def test_trocar_len_rejected_for_step1(manifest_file, tmp_path):
    assert run(manifest_file, tmp_path / "o", "train", "--method", "base", "--trocar-len", "60") == 1


def test_predict_writes_csv(manifest_file, tmp_path):
    out = tmp_path / "o"
    assert run(manifest_file, out, "generate", "--condition", "trocar", "--duration", "30") == 0
    src = out / "data" / "trocar" / "dataset_000.csv"
    dest = tmp_path / "pred.csv"
    assert run(manifest_file, out, "predict", "--method", "base", "--input", str(src),
               "--output", str(dest), "--train-missing") == 0
    lines = dest.read_text().splitlines()
    assert lines[0].startswith("trajectory,t,tau1") and lines[0].endswith("tz,valid")
    assert len(lines) == 1 + 150


def test_bench_timing_table(manifest_file, tmp_path):
    out = tmp_path / "o"
    assert run(manifest_file, out, "bench", "--which", "timing", "--train-missing") == 0
    rows = (out / "reports" / "timing.csv").read_text().splitlines()
    assert rows[0] == "length_s,troc_s,corr_s,xfer_s,status,reason"
    assert [r.split(",")[0] for r in rows[1:]] == ["60.0", "120.0"]
    assert all(r.split(",")[1] and r.split(",")[2] and r.split(",")[3] for r in rows[1:])
    assert (out / "reports" / "timing.md").exists()
    assert json.loads((out / "reports" / "environment.json").read_text())["seed"] == 3


def test_bench_needs_models_without_flag(manifest_file, tmp_path, capsys):
    assert run(manifest_file, tmp_path / "o", "bench", "--which", "nocontact") == 2
    assert "--train-missing" in capsys.readouterr().err


def test_unknown_which_is_usage_error(manifest_file, tmp_path):
    with pytest.raises(SystemExit) as exc:
        run(manifest_file, tmp_path / "o", "bench", "--which", "everything")
    assert exc.value.code == 1


def test_assert_flag_sets_exit_three(manifest_file, tmp_path, monkeypatch, capsys):
    out = tmp_path / "o"
    monkeypatch.setattr(cli, "ordering_checks", lambda report: [Check("forced", False, "x")])
    assert run(manifest_file, out, "bench", "--which", "nocontact", "--train-missing") == 0
    assert "[FAIL] forced" in capsys.readouterr().out
    assert run(manifest_file, out, "bench", "--which", "nocontact", "--assert") == 3


def test_output_dir_from_environment(manifest_file, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env-out"))
    assert main(["--manifest", str(manifest_file), "generate", "--condition", "trocar", "--duration", "20"]) == 0
    assert (tmp_path / "env-out" / "data" / "trocar" / "dataset.json").exists()


def test_method_names_cover_table():
    assert {m.value for m in Method} == {"troc", "base", "seal", "base-corr", "seal-corr", "seal-xfer"}

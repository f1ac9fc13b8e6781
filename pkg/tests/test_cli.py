import csv
import subprocess
import sys

import pytest

from evagcn.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE, build_parser, main
from evagcn.config import iter_keys
from evagcn.experiment import ABLATION_AXES

from conftest import SMALL_OVERRIDES


def sets(extra=()):
    # one-epoch runs in these tests cannot keep the decay milestone
    out = ["--set", "train.lr_decay_epochs=[]"]
    for o in [o for o in SMALL_OVERRIDES if "lr_decay" not in o] + list(extra):
        out += ["--set", o]
    return out


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["--out", str(d / "data"), "--seed", "3", "synth", "--num-classes", "2",
                 "--samples-per-class", "5"]) == 0
    return d


def test_help_lists_every_config_key():
    text = build_parser().format_help()
    for key, default in iter_keys():
        assert key in text, key
    for cmd in ("synth", "preprocess", "train", "eval", "ablate", "gradcheck", "export-embeddings"):
        assert cmd in text
    sub = subprocess.run([sys.executable, "-m", "evagcn", "train", "--help"], capture_output=True, text=True)
    assert sub.returncode == 0
    assert all(key in sub.stdout for key, _ in iter_keys())


def test_usage_errors_exit_1(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["nonsense"])
    assert e.value.code == EXIT_USAGE
    assert main(["--out", str(tmp_path), "train", "--set", "train.nope=1"]) == EXIT_USAGE
    assert main(["--out", str(tmp_path), "ablate", "--axis", "colour"]) == EXIT_USAGE


def test_missing_data_exit_2(tmp_path):
    assert main(["--out", str(tmp_path), "train", "--manifest", str(tmp_path / "none.json")]) == EXIT_DATA
    assert main(["--out", str(tmp_path), "eval", "--checkpoint", str(tmp_path / "none.agck")]) == EXIT_DATA


def test_synth_split_and_determinism(tmp_path):
    args = ["synth", "--num-classes", "4", "--samples-per-class", "5"]
    assert main(["--out", str(tmp_path / "a"), "--seed", "1"] + args) == 0
    assert main(["--out", str(tmp_path / "b"), "--seed", "1"] + args) == 0
    import json
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    splits = [s["split"] for s in m["samples"]]
    assert splits.count("train") == 16 and splits.count("test") == 4
    for c in range(4):
        assert sum(1 for s in m["samples"] if s["label"] == c and s["split"] == "test") == 1
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    assert len(list((tmp_path / "a" / "events").iterdir())) == 20


def test_train_eval_export(synth_dir, tmp_path, capsys):
    manifest = str(synth_dir / "data" / "manifest.json")
    cache = str(tmp_path / "cache")
    run = tmp_path / "run"
    code = main(["--out", str(run), "--cache", cache, "train", "--manifest", manifest, "--epochs", "1"]
                + sets())
    assert code == 0
    out = capsys.readouterr().out
    assert "final test top-1" in out
    assert "0 cached" in out
    assert (run / "checkpoint.agck").exists() and (run / "training_curves.png").exists()
    rows = list(csv.reader(open(run / "metrics.csv")))
    assert rows[0] == ["epoch", "train_loss", "train_top1", "test_top1", "lr"] and len(rows) == 2

    # warm cache: preprocessing is skipped
    assert main(["--out", str(tmp_path / "run2"), "--cache", cache, "train", "--manifest", manifest,
                 "--epochs", "1"] + sets()) == 0
    out = capsys.readouterr().out
    assert "0 built" in out
    assert (run / "metrics.csv").read_bytes() == (tmp_path / "run2" / "metrics.csv").read_bytes()

    ev = tmp_path / "ev"
    assert main(["--out", str(ev), "--cache", cache, "eval", "--checkpoint", str(run / "checkpoint.agck")]) == 0
    out = capsys.readouterr().out
    assert "top-1" in out
    conf = list(csv.reader(open(ev / "confusion.csv")))
    assert len(conf) == 3 and (ev / "confusion.png").exists()
    first = (ev / "predictions.csv").read_bytes()
    assert main(["--out", str(ev), "--cache", cache, "eval", "--checkpoint", str(run / "checkpoint.agck")]) == 0
    assert (ev / "predictions.csv").read_bytes() == first

    assert main(["--out", str(ev), "export-embeddings", "--checkpoint", str(run / "checkpoint.agck"),
                 "--split", "all"]) == 0
    lines = (ev / "embeddings.csv").read_text().splitlines()
    assert len(lines) == 1 + 10
    assert len(lines[0].split(",")) == 2 * 8 + 2

    # checkpoint/config mismatch is a data error
    assert main(["--out", str(ev), "eval", "--checkpoint", str(run / "checkpoint.agck")]
                + sets(["voxel.top_k=64"])) == EXIT_DATA


def test_point_only_branch(synth_dir, tmp_path):
    from evagcn.pipeline import BUILD_COUNTS
    manifest = str(synth_dir / "data" / "manifest.json")
    before = BUILD_COUNTS["voxel"]
    assert main(["--out", str(tmp_path), "train", "--manifest", manifest, "--epochs", "1",
                 "--branch", "point_only"] + sets()) == 0
    assert BUILD_COUNTS["voxel"] == before
    from evagcn.checkpoint import load_checkpoint
    model = load_checkpoint(tmp_path / "checkpoint.agck")["model"]
    assert model.voxel is None and model.point is not None


def test_epochs_override_rescales_schedule(synth_dir, tmp_path):
    manifest = str(synth_dir / "data" / "manifest.json")
    extra = ["--set", "model.hidden_dim=4", "--set", "voxel.top_k=32"]
    assert main(["--out", str(tmp_path), "train", "--manifest", manifest, "--epochs", "5"] + extra) == 0
    import json
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["train"]["epochs"] == 5 and cfg["train"]["lr_decay_epochs"] == [2, 4]


def test_ablation_axes_match_swept_values():
    assert ABLATION_AXES["blocks"][1] == [1, 2, 3]
    assert ABLATION_AXES["voxel_k"][1] == [1024, 1536, 2048, 2560, 3072]
    assert ABLATION_AXES["sampling"][2] == ["FPS", "UPS", "Non-UPS"]
    assert set(ABLATION_AXES) >= {"branch", "blocks", "voxel_k", "voxel_size", "max_num_events", "sampling"}


@pytest.mark.parametrize("axis,rows", [("blocks", 3), ("sampling", 3)])
def test_ablate(synth_dir, tmp_path, axis, rows):
    manifest = str(synth_dir / "data" / "manifest.json")
    extra = sets(["train.epochs=1", "train.lr_decay_epochs=[]", f'data.manifest="{manifest}"'])
    assert main(["--out", str(tmp_path), "--cache", str(tmp_path / "c"), "ablate", "--axis", axis] + extra) == 0
    table = list(csv.DictReader(open(tmp_path / f"ablation_{axis}.csv")))
    assert len(table) == rows
    assert all(0.0 <= float(r["top1_mean"]) <= 1.0 for r in table)
    if axis == "sampling":
        assert [r["setting"] for r in table] == ["FPS", "UPS", "Non-UPS"]
    assert (tmp_path / f"ablation_{axis}.png").exists()


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck", "--count", "3"]) == 0
    assert main(["gradcheck", "--count", "3", "--corrupt"]) == EXIT_NUMERIC
    assert main(["gradcheck", "--count", "2", "--tolerance", "1e-12"]) == EXIT_NUMERIC
    out = capsys.readouterr().out
    assert "FAIL" in out


def test_preprocess_command(synth_dir, tmp_path, capsys):
    manifest = str(synth_dir / "data" / "manifest.json")
    args = ["--out", str(tmp_path), "--cache", str(tmp_path / "c"), "preprocess", "--manifest", manifest] + sets()
    assert main(args) == 0
    assert main(args) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert "10 built" in out[0] and "10 cached" in out[1]

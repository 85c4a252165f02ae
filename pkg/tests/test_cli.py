import hashlib
import subprocess
import sys

import pytest

from awnet.cli import main
from awnet.inference import EvalReport


def digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS ") for line in lines)


def test_gradcheck_quick(capsys):
    assert main(["gradcheck", "--quick"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "conv2d" in out


def test_gen_data_is_deterministic(tmp_path):
    assert main(["gen-data", str(tmp_path / "a"), "--count", "2", "--val-count", "1", "--size", "32"]) == 0
    assert main(["gen-data", str(tmp_path / "b"), "--count", "2", "--val-count", "1", "--size", "32"]) == 0
    assert main(["gen-data", str(tmp_path / "c"), "--count", "2", "--val-count", "1", "--size", "32",
                 "--seed", "1"]) == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b") != digest(tmp_path / "c")
    assert sorted(p.name for p in (tmp_path / "a" / "val" / "raw").iterdir()) == ["00002.praw"]


def test_gen_data_rejects_bad_size(tmp_path, capsys):
    assert main(["gen-data", str(tmp_path), "--size", "48"]) == 1
    assert "multiple of 32" in capsys.readouterr().err


def test_missing_checkpoint_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere.awck"
    code = main(["infer", "--checkpoint", str(missing), "--input", "x.png", "--output", str(tmp_path / "o.png")])
    err = capsys.readouterr().err.strip()
    assert code == 1
    assert err.startswith("error: kind=FileNotFoundError message=")
    assert str(missing) in err


def test_usage_error_exits_two(capsys):
    assert main(["train"]) == 2
    assert "kind=UsageError" in capsys.readouterr().err
    assert main(["frobnicate"]) == 2


def test_unknown_config_key(tmp_path, capsys):
    (tmp_path / "c.txt").write_text("widht=3\n", encoding="utf-8")
    assert main(["train", "--branch", "raw", "--config", str(tmp_path / "c.txt"),
                 "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == 1
    assert "widht" in capsys.readouterr().err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", str(root / "data"), "--count", "2", "--val-count", "2", "--size", "32"]) == 0
    (root / "tiny.txt").write_text("base_channels=4\ngrowth_rate=2\nepochs=1\nbatch_size=2\n", encoding="utf-8")
    for branch in ("raw", "demosaiced"):
        assert main(["train", "--branch", branch, "--config", str(root / "tiny.txt"),
                     "--data", str(root / "data"), "--out", str(root / branch)]) == 0
    return root


def test_train_outputs(workspace):
    raw = workspace / "raw"
    assert (raw / "raw_epoch001.awck").is_file()
    assert len((raw / "loss_curve.txt").read_text().split()) == 1
    assert "base_channels=4" in (raw / "config.txt").read_text()


@pytest.mark.parametrize("extra", [[], ["--ensemble"]])
def test_infer_raw_and_fused(workspace, extra):
    praw = workspace / "data" / "val" / "raw" / "00002.praw"
    out = workspace / f"fused{len(extra)}.png"
    assert main(["infer", "--checkpoint", str(workspace / "raw" / "raw_epoch001.awck"),
                 "--checkpoint", str(workspace / "demosaiced" / "demosaiced_epoch001.awck"),
                 "--fuse", "--input", str(praw), "--output", str(out), *extra]) == 0
    assert out.is_file()


def test_infer_demosaiced_png(workspace):
    png = workspace / "data" / "val" / "demosaiced" / "00002.png"
    out = workspace / "dem.png"
    assert main(["infer", "--checkpoint", str(workspace / "demosaiced" / "demosaiced_epoch001.awck"),
                 "--input", str(png), "--output", str(out)]) == 0


def test_eval_writes_report(workspace, capsys):
    report = workspace / "report.csv"
    assert main(["eval", "--checkpoint", str(workspace / "raw" / "raw_epoch001.awck"),
                 "--data", str(workspace / "data"), "--report", str(report)]) == 0
    assert "mean_psnr=" in capsys.readouterr().out
    assert [r[0] for r in EvalReport.read(report).rows] == ["00002", "00003"]


def test_fuse_needs_both_branches(workspace, capsys):
    ckpt = str(workspace / "raw" / "raw_epoch001.awck")
    assert main(["eval", "--checkpoint", ckpt, "--checkpoint", ckpt, "--fuse",
                 "--data", str(workspace / "data"), "--report", str(workspace / "r.csv")]) == 1
    assert "one raw and one demosaiced" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "awnet", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gen-data" in proc.stdout

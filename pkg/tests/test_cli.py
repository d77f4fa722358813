import os
import subprocess
import sys

import numpy as np
import pytest

from windownet import cli, imagepipe
from windownet.multiwindow import default_init_windows
from windownet.tinynet import load_checkpoint

SUBCOMMANDS = [
    [],
    ["window"],
    ["window", "apply"],
    ["window", "affine"],
    ["window", "from-affine"],
    ["image"],
    ["image", "info"],
    ["image", "quantize"],
    ["image", "resize"],
    ["synth"],
    ["init"],
    ["train"],
    ["bitdepth"],
    ["grid"],
    ["multiwindow"],
    ["eval"],
    ["recover"],
]


@pytest.mark.parametrize("cmd", SUBCOMMANDS, ids=lambda c: " ".join(c) or "root")
def test_help_exits_zero(cmd, capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(cmd + ["--help"])
    assert e.value.code == 0
    assert "usage:" in capsys.readouterr().out


def test_bad_usage_exits_2(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["window", "affine", "--level", "10"])
    assert e.value.code == 2


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "synth.cfg"
    cfg.write_text("n_train=32\nn_val=16\nn_test=16\nimage_size=16\nblob_radius=4.0,6.0\n")
    out = d / "data"
    assert cli.main(["synth", "--config", str(cfg), "--seed", "2", "--out-dir", str(out)]) == 0
    return out


def test_window_affine_and_back(capsys):
    assert cli.main(["window", "affine", "--level", "1000", "--width", "500"]) == 0
    out = capsys.readouterr()
    assert "config fingerprint" in out.err
    vals = dict(line.split("=") for line in out.out.split() if "=" in line)
    assert float(vals["weight"]) == pytest.approx(1250 / 500)
    assert cli.main(
        ["window", "from-affine", "--weight", vals["weight"], "--bias", vals["bias"], "--ceiling", vals["ceiling"]]
    ) == 0
    back = dict(line.split("=") for line in capsys.readouterr().out.split() if "=" in line)
    assert float(back["level"]) == pytest.approx(1000)
    assert float(back["width"]) == pytest.approx(500)


def test_zero_width_is_usage_error(capsys):
    assert cli.main(["window", "affine", "--level", "10", "--width", "0"]) == 2
    assert "error" in capsys.readouterr().err


def test_window_apply_writes_8bit_pgm(tmp_path):
    src = tmp_path / "in.pgm"
    img = imagepipe.ImageTensor(np.arange(64 * 64, dtype=np.float64).reshape(1, 64, 64) % 4096, 12)
    imagepipe.write_pgm(str(src), img)
    dst = tmp_path / "out.pgm"
    assert cli.main(["window", "apply", "--level", "2048", "--width", "1024", "--input", str(src), "--output", str(dst)]) == 0
    out = imagepipe.read_pgm(str(dst))
    assert out.bit_depth == 8
    assert out.data.min() == 0 and out.data.max() == 255
    assert out.meta["level"] == "2048"
    assert out.meta["width"] == "1024"


def test_image_info_quantize_resize(tmp_path, capsys):
    src = tmp_path / "in.wnt"
    imagepipe.write_wnt(str(src), imagepipe.ImageTensor(np.full((1, 8, 8), 4095.0), 12))
    assert cli.main(["image", "info", "--input", str(src)]) == 0
    assert "12" in capsys.readouterr().out
    q = tmp_path / "q.pgm"
    assert cli.main(["image", "quantize", "--input", str(src), "--output", str(q)]) == 0
    assert imagepipe.read_pgm(str(q)).data.max() == 255
    r = tmp_path / "r.wnt"
    assert cli.main(["image", "resize", "--input", str(src), "--output", str(r), "--height", "4", "--width", "6"]) == 0
    assert imagepipe.read_wnt(str(r)).data.shape == (1, 4, 6)


def test_missing_input_is_io_error(tmp_path):
    assert cli.main(["image", "info", "--input", str(tmp_path / "absent.pgm")]) == 3


def test_eval_missing_dataset_is_io_error(tmp_path):
    ck = tmp_path / "init.wnck"
    assert cli.main(["init", "--output", str(ck)]) == 0
    assert cli.main(["eval", "--checkpoint", str(ck), "--data", str(tmp_path / "nope")]) == 3


def test_corrupt_checkpoint_is_io_error(tmp_path):
    ck = tmp_path / "bad.wnck"
    ck.write_bytes(b"not a checkpoint")
    assert cli.main(["recover", "--checkpoint", str(ck)]) == 3


def test_recover_plain_checkpoint_is_data_error(tmp_path):
    ck = tmp_path / "eight.wnck"
    assert cli.main(["init", "--front", "8bit", "--output", str(ck)]) == 0
    assert cli.main(["recover", "--checkpoint", str(ck)]) == 4


def test_window_front_needs_level(tmp_path):
    assert cli.main(["init", "--front", "window", "--output", str(tmp_path / "w.wnck")]) == 2


def test_recover_init_lists_init_windows(tmp_path, capsys):
    ck = tmp_path / "init.wnck"
    assert cli.main(["init", "--output", str(ck)]) == 0
    capsys.readouterr()
    assert cli.main(["recover", "--checkpoint", str(ck)]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert lines[0] == "channel,level,width,inverted"
    assert len(lines) == 15
    for line, w in zip(lines[1:], default_init_windows()):
        _, level, width, inv = line.split(",")
        assert float(level) == pytest.approx(w.level, rel=1e-9)
        assert float(width) == pytest.approx(w.width, rel=1e-9)
        assert inv == "0"


def test_train_is_deterministic_and_eval_matches(tmp_path, data_dir, capsys):
    paths = []
    for tag in "ab":
        p = tmp_path / f"{tag}.wnck"
        args = ["train", "--data", str(data_dir), "--front", "12bit", "--seed", "7", "--epochs", "2", "--output", str(p)]
        assert cli.main(args) == 0
        paths.append(p)
    train_csv = capsys.readouterr().out
    assert paths[0].read_bytes() == paths[1].read_bytes()
    out = tmp_path / "eval.csv"
    assert cli.main(["eval", "--checkpoint", str(paths[0]), "--data", str(data_dir), "--output", str(out)]) == 0
    # two identical training runs printed the same CSV, and eval reproduces it
    assert train_csv == out.read_text() * 2


def test_bitdepth_report_and_eval_agree(tmp_path, data_dir, capsys):
    cfg = tmp_path / "exp.ini"
    cfg.write_text(f"kind = bitdepth\ndataset = {data_dir}\nseed = 4\n[train]\nmax_epochs = 1\nbatch_size = 16\n")
    out = tmp_path / "res"
    assert cli.main(["bitdepth", "--config", str(cfg), "--out-dir", str(out)]) == 0
    capsys.readouterr()
    ck = out / "bitdepth" / "checkpoints" / "8bit.wnck"
    assert load_checkpoint(str(ck)).items["seed"] == "4"
    assert cli.main(["eval", "--checkpoint", str(ck), "--data", str(data_dir)]) == 0
    assert capsys.readouterr().out == (out / "bitdepth" / "runs" / "8bit.csv").read_text()


def test_experiment_kind_mismatch_is_usage_error(tmp_path, data_dir):
    cfg = tmp_path / "exp.ini"
    cfg.write_text(f"kind = grid\ndataset = {data_dir}\n")
    assert cli.main(["bitdepth", "--config", str(cfg)]) == 2


def test_experiment_without_dataset_is_usage_error():
    assert cli.main(["multiwindow"]) == 2


def test_console_script_module_entry(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "windownet.cli", "window", "affine", "--level", "100", "--width", "50"],
        capture_output=True,
        text=True,
        cwd=str(tmp_path),
    )
    assert proc.returncode == 0
    assert "weight=" in proc.stdout
    assert "config fingerprint" in proc.stderr

import subprocess
import sys

import pytest

from ae_locate.cli import build_parser, main

SUBCOMMANDS = ["simulate", "preprocess", "baseline", "train", "tune", "evaluate", "ablation", "export-plots"]


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Small dataset shared by the CLI tests: 3x3 grid, two repeats, 32 px samples."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--out", str(root / "ds"), "--grid-nx", "3", "--grid-ny", "3", "--repeats", "2",
                 "--validation", "2", "--seed", "1"]) == 0
    assert main(["preprocess", "--manifest", str(root / "ds" / "manifest.txt"), "--out", str(root / "sm"),
                 "--image-size", "32", "--scales", "16"]) == 0
    assert main(["train", "--samples", str(root / "sm"), "--out", str(root / "m.ckpt"), "--epochs", "2",
                 "--batch-size", "4"]) == 0
    return root


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_exits_zero(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    assert "--config" in capsys.readouterr().out


def test_top_level_help_and_entry_point():
    assert main(["--help"]) == 0
    out = subprocess.run([sys.executable, "-m", "ae_locate.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "export-plots" in out.stdout


def test_invalid_flags_exit_64(capsys):
    assert main(["train", "--bogus"]) == 64
    assert main(["nonexistent"]) == 64
    assert main(["train", "--samples", "x", "--out", "y", "--optimizer", "lbfgs"]) == 64
    assert main(["train", "--samples", "x", "--out", "y", "--epochs", "ten"]) == 64
    assert "usage error" in capsys.readouterr().err


def test_missing_input_exits_2(tmp_path, capsys):
    assert main(["baseline", "--manifest", str(tmp_path / "none.txt"), "--out", str(tmp_path / "s.csv")]) == 2
    assert "missing input" in capsys.readouterr().err
    assert main(["train", "--samples", str(tmp_path / "nope"), "--out", str(tmp_path / "m")]) == 2


def test_grid_exceeding_plate_is_configuration_error(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path / "x"), "--width", "100"]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("unknown_key = 1\n")
    assert main(["simulate", "--out", str(tmp_path / "x"), "--config", str(cfg)]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_divergence_exits_3(work, tmp_path, capsys):
    code = main(["train", "--samples", str(work / "sm"), "--out", str(tmp_path / "bad.ckpt"), "--epochs", "5",
                 "--lr", "1e6", "--optimizer", "sgd"])
    assert code == 3
    assert "diverged" in capsys.readouterr().err


def test_config_file_values_are_used(work, tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("epochs = 1\nbatch_size = 5\n")
    out = tmp_path / "m.ckpt"
    assert main(["train", "--samples", str(work / "sm"), "--out", str(out), "--config", str(cfg)]) == 0
    assert len((tmp_path / "m.ckpt.loss.csv").read_text().splitlines()) == 2
    assert "config.batch_size = 5" in (tmp_path / "m.ckpt.run.txt").read_text()


def test_threads_env_fallback(work, tmp_path, monkeypatch):
    monkeypatch.setenv("AE_LOCATE_THREADS", "2")
    assert main(["preprocess", "--manifest", str(work / "ds" / "manifest.txt"), "--out", str(tmp_path / "sm"),
                 "--image-size", "32", "--scales", "16"]) == 0
    a = sorted(p.read_bytes() for p in (work / "sm" / "train").iterdir())
    b = sorted(p.read_bytes() for p in (tmp_path / "sm" / "train").iterdir())
    assert a == b


def test_baseline_speeds_deterministic(work, tmp_path):
    for name in ("a.csv", "b.csv"):
        assert main(["baseline", "--manifest", str(work / "ds" / "manifest.txt"), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_train_is_byte_reproducible(work, tmp_path):
    args = ["train", "--samples", str(work / "sm"), "--epochs", "2", "--batch-size", "4"]
    assert main(args + ["--out", str(tmp_path / "r.ckpt")]) == 0
    assert (tmp_path / "r.ckpt").read_bytes() == (work / "m.ckpt").read_bytes()
    assert (tmp_path / "r.ckpt.loss.csv").read_bytes() == (work / "m.ckpt.loss.csv").read_bytes()


def test_tune_trials_deterministic(work, tmp_path):
    args = ["tune", "--samples", str(work / "sm"), "--iterations", "4", "--init-count", "2", "--folds", "3",
            "--tune-epochs", "1"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 6


def test_evaluate_and_hash_check(work, tmp_path, capsys):
    assert main(["evaluate", "--model", str(work / "m.ckpt"), "--samples", str(work / "sm"),
                 "--out", str(tmp_path / "r.csv")]) == 0
    assert "resolution" in capsys.readouterr().out
    other = tmp_path / "sm2"
    assert main(["preprocess", "--manifest", str(work / "ds" / "manifest.txt"), "--out", str(other),
                 "--image-size", "32", "--scales", "12"]) == 0
    args = ["evaluate", "--model", str(work / "m.ckpt"), "--samples", str(other), "--out", str(tmp_path / "q.csv")]
    assert main(args) == 2
    assert "configuration error" in capsys.readouterr().err
    assert main(args + ["--force"]) == 0


def test_ablation_writes_csv(work, tmp_path):
    out = tmp_path / "abl.csv"
    assert main(["ablation", "--samples", str(work / "sm"), "--out", str(out), "--seeds", "1",
                 "--ablation-epochs", "1", "--folds", "3"]) == 0
    assert out.read_text().startswith("condition,seed,parallel_cv_loss")


def test_export_plots_deterministic(work, tmp_path):
    speeds = tmp_path / "s.csv"
    report = tmp_path / "r.csv"
    main(["baseline", "--manifest", str(work / "ds" / "manifest.txt"), "--out", str(speeds)])
    main(["evaluate", "--model", str(work / "m.ckpt"), "--samples", str(work / "sm"), "--out", str(report)])
    sample = next((work / "sm" / "train").iterdir())
    outs = []
    for d in ("p1", "p2"):
        assert main(["export-plots", "--out", str(tmp_path / d), "--speeds", str(speeds), "--report", str(report),
                     "--sample", str(sample)]) == 0
        outs.append({p.name: p.read_bytes() for p in (tmp_path / d).iterdir()})
    assert set(outs[0]) == {"speed_histogram.png", "detection.png", "scalogram.png"}
    assert outs[0] == outs[1]


def test_export_plots_input_errors(tmp_path, capsys):
    assert main(["export-plots", "--out", str(tmp_path / "p")]) == 2
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["export-plots", "--out", str(tmp_path / "p"), "--speeds", str(empty)]) == 2
    assert main(["export-plots", "--out", str(tmp_path / "p"), "--speeds", str(tmp_path / "none.csv")]) == 2


def test_histogram_uses_50_bins(tmp_path):
    import numpy as np

    from ae_locate.plots import speed_histogram

    counts = speed_histogram(np.random.default_rng(0).normal(1500, 100, 500), tmp_path / "h.png")
    assert counts.size == 50 and counts.sum() == 500


def test_parser_defaults_are_unset():
    args = build_parser().parse_args(["train", "--samples", "s", "--out", "o"])
    assert args.lr is None and args.batch_size is None

"""Command-line driver: smoke paths, exit codes, determinism, reports."""

import csv
from pathlib import Path

import pytest

from gxattn.cli import main

TINY_GEN = ["--n", "6", "--extents", "32,32", "--seed", "3"]
TINY_NET = ["--stages", "4,8", "--downsample", "2", "--g-factor", "4",
            "--epochs", "2", "--seed", "3"]


def dataset(tmp_path, name="ds", extra=()):
    out = tmp_path / name
    assert main(["gen-data", "--out", str(out), *TINY_GEN, *extra]) == 0
    return out


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


class TestGenData:
    def test_writes_loadable_dataset(self, tmp_path, capsys):
        out = dataset(tmp_path)
        assert (out / "index.csv").exists()
        assert "wrote 6 samples" in capsys.readouterr().out

    def test_bitwise_deterministic(self, tmp_path):
        one = dataset(tmp_path, "one")
        two = dataset(tmp_path, "two")
        assert tree_bytes(one) == tree_bytes(two)

    def test_seed_changes_content(self, tmp_path):
        one = dataset(tmp_path, "one")
        out = tmp_path / "two"
        assert main(["gen-data", "--out", str(out), "--n", "6",
                     "--extents", "32,32", "--seed", "4"]) == 0
        assert tree_bytes(one) != tree_bytes(out)

    def test_bad_extents_exit_one(self, tmp_path, capsys):
        code = main(["gen-data", "--out", str(tmp_path / "x"), "--n", "4",
                     "--extents", "6,6"])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_crowded_canvas_fails_instead_of_hanging(self, tmp_path, capsys):
        code = main(["gen-data", "--out", str(tmp_path / "x"), "--n", "8",
                     "--extents", "16,16", "--seed", "3"])
        assert code == 1
        assert "cannot place" in capsys.readouterr().err


class TestTrainEval:
    def test_train_then_eval_roundtrip(self, tmp_path, capsys):
        ds = dataset(tmp_path)
        ckpt = tmp_path / "ckpt"
        assert main(["train", "--data", str(ds), "--out", str(ckpt), *TINY_NET]) == 0
        out = capsys.readouterr().out
        assert "test_mae" in out and (ckpt / "train.log").exists()

        report = tmp_path / "metrics.csv"
        code = main(["eval", "--checkpoint", str(ckpt), "--data", str(ds),
                     "--split", "test", "--out", str(report)])
        assert code == 0
        assert "mae = " in capsys.readouterr().out
        with open(report, newline="") as fh:
            rows = list(csv.reader(fh))
        metrics = {row[0] for row in rows[1:]}
        assert {"n", "mae", "rmse", "game"} <= metrics

    def test_every_mode_trains(self, tmp_path):
        ds = dataset(tmp_path)
        for mode in ("csca", "early", "late", "rgb_only", "aux_only"):
            code = main(["train", "--data", str(ds), "--out",
                         str(tmp_path / f"ckpt_{mode}"), "--mode", mode, *TINY_NET])
            assert code == 0, mode

    def test_checkpoints_bitwise_deterministic(self, tmp_path):
        ds = dataset(tmp_path)
        for name in ("one", "two"):
            assert main(["train", "--data", str(ds), "--out",
                         str(tmp_path / name), *TINY_NET]) == 0
        one, two = tree_bytes(tmp_path / "one"), tree_bytes(tmp_path / "two")
        assert one == two

    def test_fusion_stage_flag_accepted(self, tmp_path):
        ds = dataset(tmp_path)
        code = main(["train", "--data", str(ds), "--out", str(tmp_path / "c"),
                     *TINY_NET, "--fusion-stages", "all"])
        assert code == 0

    def test_geometry_mismatch_exits_one(self, tmp_path, capsys):
        ds = dataset(tmp_path)
        code = main(["train", "--data", str(ds), "--out", str(tmp_path / "c"),
                     "--stages", "4,8,8", "--downsample", "2",
                     "--epochs", "1", "--seed", "0"])
        assert code == 1
        assert "ground truth" in capsys.readouterr().err

    def test_eval_without_checkpoint_exits_two(self, tmp_path, capsys):
        ds = dataset(tmp_path)
        assert main(["eval", "--data", str(ds)]) == 2
        assert "--checkpoint" in capsys.readouterr().err

    def test_eval_missing_dataset_exits_one(self, tmp_path, capsys):
        code = main(["eval", "--oracle", "--data", str(tmp_path / "absent")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_oracle_scores_zero_error(self, tmp_path, capsys):
        ds = dataset(tmp_path)
        assert main(["eval", "--oracle", "--data", str(ds), "--split", "all"]) == 0
        out = capsys.readouterr().out
        assert "mae = 0.000000" in out and "rmse = 0.000000" in out
        assert "game(2) = 0.000000" in out

    def test_eval_reports_illumination_scopes(self, tmp_path, capsys):
        ds = dataset(tmp_path)
        assert main(["eval", "--oracle", "--data", str(ds), "--split", "all"]) == 0
        out = capsys.readouterr().out
        assert "bright:mae" in out and "dark:mae" in out

    def test_metric_csv_bitwise_deterministic(self, tmp_path):
        ds = dataset(tmp_path)
        ckpt = tmp_path / "ckpt"
        assert main(["train", "--data", str(ds), "--out", str(ckpt), *TINY_NET]) == 0
        for name in ("a.csv", "b.csv"):
            assert main(["eval", "--checkpoint", str(ckpt), "--data", str(ds),
                         "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestBenchCommand:
    def test_custom_grid_report(self, tmp_path, capsys):
        report = tmp_path / "bench.csv"
        code = main(["bench", "--grid", "4,8,8,2;7,8,8,2", "--repeats", "5",
                     "--out", str(report)])
        assert code == 0
        assert "speedup" in capsys.readouterr().out
        with open(report, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "kind" and len(rows) == 4  # header + nonlocal + grouped + skip

    def test_all_points_skipped_exits_one(self, tmp_path, capsys):
        assert main(["bench", "--grid", "7,8,8,2", "--repeats", "5"]) == 1
        assert "no valid grid points" in capsys.readouterr().err

    def test_malformed_grid_exits_one(self, capsys):
        assert main(["bench", "--grid", "4,8,8"]) == 1
        assert "error:" in capsys.readouterr().err


class TestGradcheckCommand:
    def test_passes_and_writes_lines(self, tmp_path, capsys):
        out = tmp_path / "grad.txt"
        assert main(["gradcheck", "--seed", "0", "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "all 26 gradient checks passed" in stdout
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 26 and all(line.startswith("[PASS]") for line in lines)

    def test_injected_fault_fails_run(self, monkeypatch, capsys):
        from gxattn import tensor as T

        monkeypatch.setattr(T, "_matmul_adjoint_lhs",
                            lambda g, rhs: 1.01 * (g @ rhs.T))
        assert main(["gradcheck", "--seed", "0"]) == 1
        err = capsys.readouterr().err
        assert "failed" in err


def test_unknown_command_raises_system_exit():
    with pytest.raises(SystemExit):
        main(["frobnicate"])

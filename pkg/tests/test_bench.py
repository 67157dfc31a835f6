"""Benchmark harness: grid parsing, exact MAC invariants, report format."""

import csv

import pytest

from gxattn import bench as B
from gxattn.errors import ConfigError


class TestParseGrid:
    def test_presets_resolve(self):
        assert B.parse_grid("flops") == B.GRID_PRESETS["flops"]
        assert B.parse_grid("walltime") == B.GRID_PRESETS["walltime"]

    def test_explicit_points(self):
        assert B.parse_grid("4,8,8,2;8,16,16,4") == [(4, 8, 8, 2), (8, 16, 16, 4)]

    def test_malformed_point_rejected(self):
        with pytest.raises(ConfigError):
            B.parse_grid("4,8,8")

    def test_non_integer_rejected(self):
        with pytest.raises(ConfigError):
            B.parse_grid("4,8,eight,2")


class TestRunGrid:
    def test_exact_mac_ratio_on_flops_preset(self):
        rows = B.run_grid(B.parse_grid("flops"), repeats=5, seed=0)
        grouped = [r for r in rows if r.kind == "grouped"]
        assert grouped, "no grouped rows produced"
        baselines = {(r.c, r.h, r.w): r.attention_mults
                     for r in rows if r.kind == "nonlocal"}
        for row in grouped:
            base = baselines[(row.c, row.h, row.w)]
            assert base == row.g * row.attention_mults, (
                f"C={row.c} H={row.h} W={row.w} G={row.g}")

    def test_reference_counts_at_c8_8x8(self):
        rows = B.run_grid([(8, 8, 8, 4)], repeats=5, seed=0)
        by_kind = {r.kind: r for r in rows}
        assert by_kind["nonlocal"].attention_mults == 32768
        assert by_kind["grouped"].attention_mults == 8192

    def test_indivisible_points_become_skips(self):
        rows = B.run_grid([(7, 8, 8, 2), (4, 8, 8, 3), (4, 8, 8, 2)],
                          repeats=5, seed=0)
        kinds = [r.kind for r in rows]
        assert kinds.count("skipped") == 2
        assert "grouped" in kinds

    def test_too_few_repeats_rejected(self):
        with pytest.raises(ConfigError):
            B.run_grid([(4, 8, 8, 2)], repeats=3)

    def test_single_thread_recorded(self):
        rows = B.run_grid([(4, 8, 8, 2)], repeats=5, seed=0)
        assert all(r.threads == 1 for r in rows if r.kind != "skipped")

    def test_mac_counts_deterministic(self):
        grid = [(4, 8, 8, 2), (8, 8, 8, 4)]
        one = [(r.kind, r.attention_mults, r.total_mults)
               for r in B.run_grid(grid, repeats=5, seed=1)]
        two = [(r.kind, r.attention_mults, r.total_mults)
               for r in B.run_grid(grid, repeats=5, seed=1)]
        assert one == two


class TestReport:
    def test_csv_columns_and_rows(self, tmp_path):
        rows = B.run_grid([(4, 8, 8, 2), (7, 8, 8, 2)], repeats=5, seed=0)
        out = tmp_path / "bench.csv"
        B.write_report(out, rows)
        with open(out, newline="") as fh:
            records = list(csv.reader(fh))
        assert records[0] == B.REPORT_COLUMNS
        assert len(records) == len(rows) + 1
        skipped = [r for r in records[1:] if r[0] == "skipped"]
        assert skipped and skipped[0][-1].startswith("odd channel")

    def test_summary_mentions_every_point(self):
        rows = B.run_grid([(4, 8, 8, 2), (4, 8, 8, 3)], repeats=5, seed=0)
        text = B.summarize(rows)
        assert "speedup" in text and "skip" in text

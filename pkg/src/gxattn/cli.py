"""Command-line driver.

Subcommands: ``bench`` (MAC-exact attention benchmarks), ``gradcheck``
(finite-difference suites), ``gen-data`` (synthetic dataset), ``train``
(fusion-mode training with a held-out evaluation), ``eval`` (metric report
for a checkpoint). Every command is deterministic given its ``--seed``
(wall-times excepted) and exits 0 only when all of its asserted invariants
hold.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import bench as B
from . import gradcheck as G
from . import network as N
from .errors import ConfigError
from .metrics import game, mae, rmse, write_metric_report
from .synthdata import load_dataset, make_dataset

HANDLED_ERRORS = (ValueError, ArithmeticError, OSError, AssertionError, KeyError)


def _pair_of_ints(text: str) -> tuple[int, int]:
    parts = tuple(int(p) for p in text.split(","))
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated integers, got {text!r}")
    return parts


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(","))


def cmd_bench(args) -> int:
    grid = B.parse_grid(args.grid)
    rows = B.run_grid(grid, repeats=args.repeats, seed=args.seed)
    print(B.summarize(rows))
    if args.out:
        B.write_report(args.out, rows)
        print(f"report written to {args.out}")
    timed = [r for r in rows if r.kind != "skipped"]
    if not timed:
        print("error: no valid grid points", file=sys.stderr)
        return 1
    return 0


def cmd_gradcheck(args) -> int:
    results = G.run_all(seed=args.seed)
    lines = [r.line() for r in results]
    print("\n".join(lines))
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    failures = [r for r in results if not r.passed]
    if failures:
        print(f"{len(failures)} gradient check(s) failed", file=sys.stderr)
        return 1
    print(f"all {len(results)} gradient checks passed")
    return 0


def cmd_gen_data(args) -> int:
    out = make_dataset(args.out, n=args.n, extents=args.extents, channels=args.channels,
                       sigma=args.sigma, gt_scale=args.gt_scale,
                       train_ratio=args.train_ratio, seed=args.seed)
    ds = load_dataset(out)
    print(f"wrote {len(ds.samples)} samples to {out} "
          f"({len(ds.train_indices)} train / {len(ds.test_indices)} test)")
    return 0


def _config_from_args(args, header) -> N.StageConfig:
    channels = args.stages
    g_factors = args.g_factor
    if len(g_factors) == 1:
        g_factors = g_factors * len(channels)
    downsample = args.downsample
    if len(downsample) == 1:
        downsample = downsample * len(channels)
    fusion_stages = args.fusion_stages
    if fusion_stages not in ("last", "all"):
        fusion_stages = _int_tuple(fusion_stages)
    return N.StageConfig(
        in_channels=int(header["channels"]),
        channels=channels,
        downsample=downsample,
        group_factors=g_factors,
        input_extents=(int(header["height"]), int(header["width"])),
        mode=args.mode,
        fusion_stages=fusion_stages,
        reduction=args.reduction,
        partition=args.partition,
        partition_seed=args.seed,
        aggregate_source=args.agg_source,
    )


def _split_samples(ds, which: str):
    if which == "train":
        return [ds.samples[i] for i in ds.train_indices]
    if which == "test":
        return [ds.samples[i] for i in ds.test_indices]
    return list(ds.samples)


def _metric_rows(preds, samples, levels) -> list[tuple[str, object, float]]:
    gts = [s.gt_density.astype(np.float64) for s in samples]
    rows: list[tuple[str, object, float]] = [("n", None, float(len(samples))),
                                             ("mae", None, mae(preds, gts)),
                                             ("rmse", None, rmse(preds, gts))]
    rows += [("game", level, game(preds, gts, level)) for level in levels]
    for tag in ("bright", "dark"):
        idx = [i for i, s in enumerate(samples) if s.illumination == tag]
        if not idx:
            continue
        sub_p = [preds[i] for i in idx]
        sub_g = [gts[i] for i in idx]
        rows.append((f"{tag}:n", None, float(len(idx))))
        rows.append((f"{tag}:mae", None, mae(sub_p, sub_g)))
        rows.append((f"{tag}:rmse", None, rmse(sub_p, sub_g)))
        rows += [(f"{tag}:game", level, game(sub_p, sub_g, level)) for level in levels]
    return rows


def cmd_train(args) -> int:
    ds = load_dataset(args.data)
    cfg = _config_from_args(args, ds.header)
    expected_gt = (int(ds.header["gt_height"]), int(ds.header["gt_width"]))
    if cfg.output_extents != expected_gt:
        raise ConfigError(
            f"network emits {cfg.output_extents} but the dataset's ground truth is "
            f"{expected_gt}; adjust --stages/--downsample or regenerate the data"
        )

    net = N.build_network(cfg, seed=args.seed)
    train_samples = _split_samples(ds, "train")
    test_samples = _split_samples(ds, "test")
    batch = N.as_batch(train_samples)

    log_lines = [f"mode {cfg.mode} seed {args.seed} epochs {args.epochs} lr {args.lr!r} "
                 f"train {len(train_samples)} test {len(test_samples)}"]
    print(log_lines[0])
    for epoch in range(1, args.epochs + 1):
        loss = N.train_step(net, batch, lr=N.scheduled_lr(args.lr, epoch))
        line = f"epoch {epoch} loss {loss!r}"
        log_lines.append(line)
        if epoch == 1 or epoch % max(1, args.epochs // 10) == 0 or epoch == args.epochs:
            print(line)

    preds = [N.predict(net, s.mod_a, s.mod_b).astype(np.float64) for s in test_samples]
    gts = [s.gt_density.astype(np.float64) for s in test_samples]
    test_mae = float(mae(preds, gts))
    test_rmse = float(rmse(preds, gts))
    for line in (f"test_mae {test_mae!r}", f"test_rmse {test_rmse!r}"):
        log_lines.append(line)
        print(line)

    out = Path(args.out)
    N.save_checkpoint(net, out)
    (out / "train.log").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    print(f"checkpoint written to {out}")
    return 0


def cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    samples = _split_samples(ds, args.split)
    if not samples:
        raise ConfigError(f"split {args.split!r} of {args.data} holds no samples")
    if args.oracle:
        preds = [s.gt_density.astype(np.float64) for s in samples]
    else:
        net = N.load_checkpoint(args.checkpoint)
        expected = (net.cfg.in_channels, *net.cfg.input_extents)
        got = samples[0].mod_a.shape
        if got != expected:
            raise ConfigError(f"checkpoint expects inputs {expected}, dataset provides {got}")
        preds = [N.predict(net, s.mod_a, s.mod_b).astype(np.float64) for s in samples]

    levels = list(range(args.l_max + 1))
    rows = _metric_rows(preds, samples, levels)
    for metric, level, value in rows:
        label = metric if level is None else f"{metric}({level})"
        print(f"{label} = {value:.6f}")

    game_by_level = [v for m, level, v in rows if m == "game"]
    assert all(game_by_level[i + 1] >= game_by_level[i] - 1e-9
               for i in range(len(game_by_level) - 1)), "refinement monotonicity violated"
    mae_row = next(v for m, _, v in rows if m == "mae")
    assert game_by_level[0] == mae_row, "level-0 grid metric must equal the absolute error"

    scoped = {(m, level): v for m, level, v in rows}
    if ("bright:n", None) in scoped and ("dark:n", None) in scoped:
        parts = [(tag, scoped[(f"{tag}:n", None)]) for tag in ("bright", "dark")]
        assert scoped[("n", None)] == sum(count for _, count in parts)
        for metric, level in [("mae", None)] + [("game", lv) for lv in levels]:
            whole = scoped[(metric, level)] * scoped[("n", None)]
            split = sum(count * scoped[(f"{tag}:{metric}", level)] for tag, count in parts)
            assert abs(whole - split) <= 1e-9 * max(1.0, abs(whole)), (
                f"{metric} totals do not decompose across illumination scopes")
        whole = scoped[("rmse", None)] ** 2 * scoped[("n", None)]
        split = sum(count * scoped[(f"{tag}:rmse", None)] ** 2 for tag, count in parts)
        assert abs(whole - split) <= 1e-9 * max(1.0, abs(whole)), (
            "squared-error totals do not decompose across illumination scopes")

    if args.out:
        write_metric_report(args.out, rows)
        print(f"report written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gxattn",
        description="grouped cross-modal attention: benchmarks, checks, toy pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="time attention blocks and assert exact MAC ratios")
    p.add_argument("--grid", default="flops",
                   help="preset name (flops, walltime) or 'C,H,W,G;...' points")
    p.add_argument("--repeats", type=int, default=5, help="timing repeats per point (>= 5)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV report path")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="plain-text results path")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("gen-data", help="generate a synthetic two-modality dataset")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extents", type=_pair_of_ints, default=(32, 32))
    p.add_argument("--channels", type=int, default=2)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--gt-scale", type=int, default=4)
    p.add_argument("--train-ratio", type=float, default=0.5)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a fusion variant and report held-out error")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--mode", default="csca", choices=N.MODES)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--lr", type=float, default=0.5,
                   help="base step size; halves every 15 epochs after epoch 30")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stages", type=_int_tuple, default=(8, 16),
                   help="per-stage channel counts, e.g. 8,16")
    p.add_argument("--g-factor", type=_int_tuple, default=(4,),
                   help="group factor per stage (single value applies to all)")
    p.add_argument("--downsample", type=_int_tuple, default=(2,),
                   help="stride per stage (single value applies to all)")
    p.add_argument("--fusion-stages", default="last",
                   help="'last', 'all', or comma-separated stage indices")
    p.add_argument("--reduction", type=int, default=4)
    p.add_argument("--partition", default="contiguous",
                   choices=("contiguous", "seeded_random"))
    p.add_argument("--agg-source", default="attention_output",
                   choices=N.AGGREGATE_SOURCES,
                   help="what the fusion weights blend at each fusion site")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="metric report for a checkpoint on a dataset")
    p.add_argument("--checkpoint", default=None, help="checkpoint directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default="test", choices=("train", "test", "all"))
    p.add_argument("--l-max", type=int, default=2)
    p.add_argument("--out", default=None, help="CSV report path")
    p.add_argument("--oracle", action="store_true",
                   help="self-check hook: score the ground truth against itself")
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "eval" and not args.oracle and not args.checkpoint:
        print("error: eval needs --checkpoint (or --oracle)", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except HANDLED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

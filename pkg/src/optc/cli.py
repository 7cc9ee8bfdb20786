"""Command-line surface: scene generation, sorter/joint training, evaluation,
ordering comparison, the neighbor-count ablation, and the gradient gate.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure,
4 gradient-verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import backbone, figures, gradsuite, metrics, sorter as sorter_mod, train as train_mod
from .cloudio import (
    CloudFormatError,
    ConfigError,
    parse_config,
    read_cloud,
    write_cloud,
    write_effective_config,
)
from .curves import DEFAULT_WARMUP_VARIANTS, static_order
from .geometry import generate_scene, knn
from .metrics import LocalityReport, LocalityRow
from .train import STATIC_VARIANTS, TrainingDiverged

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 4

ORDER_CHOICES = ("z", "z-rev", "hilbert", "hilbert-rev", "learned")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, clouds: bool = True):
        p.add_argument("--config", type=Path, default=None, help="YAML run config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        if clouds:
            p.add_argument("clouds", nargs="+", type=Path, help="OPTC cloud files")

    p = sub.add_parser("gen-scenes", help="write synthetic labeled scenes")
    common(p, clouds=False)
    p.add_argument("--count", type=int, default=8, help="number of scenes")

    p = sub.add_parser("train-sorter", help="pretrain the sorter on the ordering loss")
    common(p)
    p.add_argument("--k", type=int, default=None, help="override sorter.k")

    p = sub.add_parser("train", help="warmup + joint training")
    common(p)
    p.add_argument("--k", type=int, default=None, help="override sorter.k")
    p.add_argument(
        "--order",
        choices=ORDER_CHOICES,
        default=None,
        help="serialization: a fixed static curve, or 'learned' (warmup then sorter)",
    )

    p = sub.add_parser("eval", help="evaluate checkpoints on labeled clouds")
    common(p)
    p.add_argument(
        "--checkpoint",
        type=Path,
        required=True,
        help="checkpoint directory (model.ckpt + sorter.ckpt) or model.ckpt path",
    )
    p.add_argument("--k", type=int, default=8, help="neighbor count for retention")

    p = sub.add_parser(
        "compare-orders", help="locality of every static curve and the trained sorter"
    )
    common(p)
    p.add_argument("--checkpoint", type=Path, default=None, help="sorter checkpoint")
    p.add_argument("--k", type=int, default=8, help="neighbor count for retention")
    p.add_argument("--window", type=int, default=16, help="attention window size")
    p.add_argument("--bits", type=int, default=10, help="curve bits per axis")

    p = sub.add_parser("ablate-k", help="train + evaluate across neighbor counts")
    common(p)
    p.add_argument(
        "--k-values", default="4,8,16,24,32", help="comma-separated neighbor counts"
    )
    p.add_argument(
        "--holdout", nargs="*", type=Path, default=[], help="evaluation cloud files"
    )

    p = sub.add_parser("grad-check", help="finite-difference gradient gate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=gradsuite.DEFAULT_SEEDS)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, CloudFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def _dispatch(args) -> int:
    handlers = {
        "gen-scenes": _cmd_gen_scenes,
        "train-sorter": _cmd_train_sorter,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "compare-orders": _cmd_compare_orders,
        "ablate-k": _cmd_ablate_k,
        "grad-check": _cmd_grad_check,
    }
    return handlers[args.command](args)


def _load_config(args):
    config = parse_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if getattr(args, "k", None) is not None and args.command != "eval":
        config = config.with_sorter_k(args.k)
    if getattr(args, "order", None) is not None:
        config = dataclasses.replace(
            config, train=dataclasses.replace(config.train, serialization=args.order)
        )
    return config


def _read_clouds(paths):
    return [read_cloud(p) for p in paths]


def _cmd_gen_scenes(args) -> int:
    config = _load_config(args)
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    args.out.mkdir(parents=True, exist_ok=True)
    write_effective_config(config, args.out)
    for i in range(args.count):
        scene_cfg = dataclasses.replace(config.scene, seed=config.seed + i)
        cloud = generate_scene(scene_cfg)
        path = args.out / f"scene_{i:03d}.optc"
        write_cloud(cloud, path)
        print(f"wrote {path} ({cloud.n} points)")
    return EXIT_OK


def _cmd_train_sorter(args) -> int:
    config = _load_config(args)
    clouds = _read_clouds(args.clouds)
    args.out.mkdir(parents=True, exist_ok=True)
    write_effective_config(config, args.out)
    params, history = train_mod.train_sorter(clouds, config.train)
    sorter_mod.save_sorter(args.out / "sorter.ckpt", params, config.train.sorter)
    history.write_jsonl(args.out / "history.jsonl")
    figures.save_training_figure(history, args.out / "figures" / "sorter_training.png")
    last = history.records[-1]
    print(
        f"trained sorter for {config.train.epochs} epochs: "
        f"l_local={last.l_local:.5f} l_dist={last.l_dist:.5f} retention={last.retention:.4f}"
    )
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _load_config(args)
    clouds = _read_clouds(args.clouds)
    args.out.mkdir(parents=True, exist_ok=True)
    write_effective_config(config, args.out)
    model, sorter_params, history = train_mod.train_joint(
        clouds, config.train, checkpoint_dir=args.out / "checkpoints"
    )
    history.write_jsonl(args.out / "history.jsonl")
    figures.save_training_figure(history, args.out / "figures" / "training.png")
    report, locality = train_mod.evaluate(
        model, sorter_params, clouds, neighbor_k=min(8, min(c.n for c in clouds) - 1)
    )
    rows = [("learned (train set)", report)]
    metrics.dump_json(
        {"train_set": report.to_dict(), "locality": locality.to_dict()},
        args.out / "report.json",
    )
    (args.out / "report_iou.csv").write_text(metrics.iou_csv(rows), encoding="utf-8")
    (args.out / "report_acc.csv").write_text(metrics.acc_csv(rows), encoding="utf-8")
    figures.save_metrics_figure(report, args.out / "figures" / "train_metrics.png")
    print(metrics.metrics_text_table(rows), end="")
    last = history.records[-1]
    print(f"final epoch: l_total={last.l_total:.5f} source={last.serialization}")
    return EXIT_OK


def _find_checkpoints(path: Path) -> tuple[Path, Path]:
    if path.is_dir():
        model, srt = path / "model.ckpt", path / "sorter.ckpt"
    else:
        model, srt = path, path.parent / "sorter.ckpt"
    if not model.exists():
        raise FileNotFoundError(f"model checkpoint not found at {model}")
    if not srt.exists():
        raise FileNotFoundError(f"sorter checkpoint not found at {srt}")
    return model, srt


def _cmd_eval(args) -> int:
    clouds = _read_clouds(args.clouds)
    model_path, sorter_path = _find_checkpoints(args.checkpoint)
    model = backbone.load_model(model_path)
    sorter_params, _ = sorter_mod.load_sorter(sorter_path)
    report, locality = train_mod.evaluate(model, sorter_params, clouds, neighbor_k=args.k)
    args.out.mkdir(parents=True, exist_ok=True)
    rows = [("learned", report)]
    metrics.dump_json(
        {"metrics": report.to_dict(), "locality": locality.to_dict()},
        args.out / "report.json",
    )
    (args.out / "report_iou.csv").write_text(metrics.iou_csv(rows), encoding="utf-8")
    (args.out / "report_acc.csv").write_text(metrics.acc_csv(rows), encoding="utf-8")
    (args.out / "locality.csv").write_text(metrics.locality_csv(locality), encoding="utf-8")
    figures.save_metrics_figure(report, args.out / "figures" / "metrics.png")
    figures.save_locality_figure(locality, args.out / "figures" / "locality.png")
    print(metrics.metrics_text_table(rows), end="")
    print(metrics.locality_text_table(locality), end="")
    return EXIT_OK


def _cmd_compare_orders(args) -> int:
    clouds = _read_clouds(args.clouds)
    if args.k >= min(c.n for c in clouds):
        raise ConfigError("--k must be smaller than every cloud")

    sorter_params = None
    if args.checkpoint is not None:
        path = args.checkpoint
        if path.is_dir():
            path = path / "sorter.ckpt"
        sorter_params, _ = sorter_mod.load_sorter(path)
    else:
        print(
            "warning: no sorter checkpoint given; comparing static orders only",
            file=sys.stderr,
        )

    tables = [knn(c, args.k) for c in clouds]
    rows = []
    for variant in DEFAULT_WARMUP_VARIANTS:
        rets, exts = [], []
        for cloud, table in zip(clouds, tables):
            perm = static_order(cloud, variant, args.bits)
            rets.append(metrics.neighbor_retention(perm, table, args.window))
            exts.append(metrics.window_extent(perm, cloud, args.window))
        rows.append(
            LocalityRow(
                method=variant.label,
                retention=float(np.mean(rets)),
                mean_extent=float(np.mean(exts)),
            )
        )
    if sorter_params is not None:
        rets, exts = [], []
        for cloud, table in zip(clouds, tables):
            scores, _ = sorter_mod.score_points(sorter_params, cloud, mode="eval")
            perm = sorter_mod.scores_to_permutation(scores)
            rets.append(metrics.neighbor_retention(perm, table, args.window))
            exts.append(metrics.window_extent(perm, cloud, args.window))
        rows.append(
            LocalityRow(
                method="learned",
                retention=float(np.mean(rets)),
                mean_extent=float(np.mean(exts)),
            )
        )

    report = LocalityReport(k=args.k, window_size=args.window, rows=rows)
    args.out.mkdir(parents=True, exist_ok=True)
    metrics.dump_json(report.to_dict(), args.out / "locality.json")
    (args.out / "locality.csv").write_text(metrics.locality_csv(report), encoding="utf-8")
    figures.save_locality_figure(report, args.out / "figures" / "compare_orders.png")
    print(metrics.locality_text_table(report), end="")
    return EXIT_OK


def _cmd_ablate_k(args) -> int:
    config = _load_config(args)
    try:
        k_values = [int(v) for v in str(args.k_values).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--k-values must be comma-separated integers, got {args.k_values!r}")
    if not k_values:
        raise ConfigError("--k-values is empty")
    train_clouds = _read_clouds(args.clouds)
    eval_clouds = _read_clouds(args.holdout) if args.holdout else train_clouds
    args.out.mkdir(parents=True, exist_ok=True)
    write_effective_config(config, args.out)
    rows = train_mod.ablation_sweep(train_clouds, eval_clouds, config.train, k_values)
    class_names = train_clouds[0].class_names
    metrics.dump_json({"rows": rows}, args.out / "ablation.json")
    (args.out / "ablation.csv").write_text(
        train_mod.ablation_csv(rows, class_names), encoding="utf-8"
    )
    figures.save_ablation_figure(rows, args.out / "figures" / "ablation.png")
    print(train_mod.ablation_csv(rows, class_names), end="")
    failures = [r for r in rows if r.get("error")]
    if failures:
        print(f"{len(failures)} of {len(rows)} runs failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    results = gradsuite.run_suite(seeds=args.seeds, base_seed=args.seed)
    print(gradsuite.format_results(results), end="")
    if all(r.passed for r in results):
        print("gradient suite: all checks passed")
        return EXIT_OK
    print("gradient suite: FAILURES detected", file=sys.stderr)
    return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands: prepare (build subset manifests from raw CIFAR files), train,
eval (score a checkpoint), verify-blocks (three-form equivalence report),
count-params, plot (SVG charts from metrics CSVs) and sweep (vary exactly
one of cardinality/depth/base-width and render combined plots).
"""

import argparse
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, data, plotting
from .autograd import backward, constant, mul, param, sum_all
from .model import (
    BottleneckBlock, ModelConfig, build_model, count_parameters,
    translate_weights, validate_config,
)
from .train import TrainConfig, evaluate, load_checkpoint, restore_model, train


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--depth", type=int, default=29)
    p.add_argument("--cardinality", type=int, default=8)
    p.add_argument("--base-width", type=int, default=64)
    p.add_argument("--block-form", choices=("split", "concat", "grouped"), default="grouped")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--drop-epochs", default="150,225",
                   help="comma-separated lr drop epochs, empty string for none")
    p.add_argument("--drop-factor", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.0005)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="resnextkit",
                                 description="grouped-convolution residual networks at desk scale")
    ap.add_argument("--threads", type=int, default=1,
                    help="BLAS thread cap; 1 is the strict-determinism mode")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build subsets and write audit manifests")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--subset", default="all",
                   choices=("cifar2", "cifar5", "cifar10", "all"))

    p = sub.add_parser("train", help="run the training recipe on a subset")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--subset", required=True, choices=("cifar2", "cifar5", "cifar10"))
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    _model_flags(p)
    _train_flags(p)

    p = sub.add_parser("eval", help="score a checkpoint on a subset's test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--subset", default=None, choices=("cifar2", "cifar5", "cifar10"),
                   help="defaults to the subset recorded in the checkpoint")

    p = sub.add_parser("verify-blocks", help="three-form equivalence report")
    _model_flags(p)
    p.add_argument("--dtype", choices=("float32", "float64", "both"), default="both")
    p.add_argument("--tolerance", type=float, default=None,
                   help="override the per-dtype default (1e-4 / 1e-8)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("count-params", help="exact learnable-scalar count for a config")
    _model_flags(p)
    p.add_argument("--classes", type=int, default=10)

    p = sub.add_parser("plot", help="render an SVG chart from metrics CSVs")
    p.add_argument("--kind", choices=("error-vs-epoch", "error-vs-size"), required=True)
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--labels", default=None, help="comma-separated series labels")
    p.add_argument("--params", default=None,
                   help="comma-separated parameter counts (error-vs-size only)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="vary one config axis, train each point, plot")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--subset", required=True, choices=("cifar2", "cifar5", "cifar10"))
    p.add_argument("--vary", action="append", required=True,
                   choices=("cardinality", "depth", "base-width"))
    p.add_argument("--values", required=True, help="comma-separated axis values")
    _model_flags(p)
    _train_flags(p)
    return ap


def _drop_epochs(text: str) -> tuple[int, ...]:
    text = text.strip()
    return tuple(int(v) for v in text.split(",")) if text else ()


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, base_lr=args.lr,
        lr_drop_epochs=_drop_epochs(args.drop_epochs), lr_drop_factor=args.drop_factor,
        momentum=args.momentum, weight_decay=args.weight_decay,
        augment=not args.no_augment, seed=args.seed,
    )


def _load_subset(data_dir: str, name: str) -> data.Dataset:
    train_records, test_records = data.load_cifar_dir(data_dir)
    return data.build_subset(train_records, test_records, data.SUBSET_SPECS[name])


def _series_name(cfg: ModelConfig) -> str:
    return f"{cfg.cardinality}x{cfg.base_width}d"


def write_run_manifest(path: str, run_id: str, model_cfg: ModelConfig,
                       train_cfg: TrainConfig, subset: str, files: dict) -> None:
    lines = [f"artifact_version {__version__}", f"run_id {run_id}", f"subset {subset}"]
    for k, v in vars(model_cfg).items():
        lines.append(f"model.{k} {v}")
    for k, v in vars(train_cfg).items():
        v = ",".join(str(d) for d in v) if isinstance(v, tuple) else v
        lines.append(f"train.{k} {v}")
    for k, v in files.items():
        lines.append(f"file.{k} {v}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def cmd_prepare(args) -> int:
    names = ("cifar2", "cifar5", "cifar10") if args.subset == "all" else (args.subset,)
    os.makedirs(args.out_dir, exist_ok=True)
    train_records, test_records = data.load_cifar_dir(args.data_dir)
    for name in names:
        ds = data.build_subset(train_records, test_records, data.SUBSET_SPECS[name])
        manifest = os.path.join(args.out_dir, f"{name}_manifest.txt")
        data.write_subset_manifest(ds, manifest)
        print(f"{ds.spec.name}: {len(ds.train)} train / {len(ds.test)} test -> {manifest}")
    return 0


def cmd_train(args) -> int:
    dataset = _load_subset(args.data_dir, args.subset)
    model_cfg = ModelConfig(args.depth, args.cardinality, args.base_width,
                            num_classes=dataset.spec.num_classes, block_form=args.block_form)
    validate_config(model_cfg)
    train_cfg = _train_config(args)
    result = train(model_cfg, train_cfg, dataset, args.out_dir,
                   resume_from=args.resume, subset_name=args.subset, log=print)
    run_id = f"{args.subset}-d{args.depth}-{_series_name(model_cfg)}-seed{args.seed}"
    manifest = os.path.join(args.out_dir, "run_manifest.txt")
    subset_manifest = os.path.join(args.out_dir, f"{args.subset}_manifest.txt")
    data.write_subset_manifest(dataset, subset_manifest)
    write_run_manifest(manifest, run_id, model_cfg, train_cfg, args.subset, {
        "metrics": result.metrics_path,
        "checkpoint": result.checkpoint_path,
        "subset_manifest": subset_manifest,
    })
    last = result.metrics[-1]
    print(f"done: train acc {last.train_acc:.2f}%, test err {last.test_err:.2f}% "
          f"({manifest})")
    return 0


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    subset = args.subset or ck.subset
    if subset is None:
        print("error: checkpoint records no subset; pass --subset", file=sys.stderr)
        return 1
    dataset = _load_subset(args.data_dir, subset)
    model, _ = restore_model(ck)
    stats = ck.norm_stats or data.compute_norm_stats(dataset.train)
    loss, err = evaluate(model, dataset.test, stats, ck.train_config.batch_size)
    print(f"{subset}: test loss {loss:.4f}, test error {err:.2f}% "
          f"({ck.epoch} epochs trained)")
    return 0


def _block_deviation(blk: BottleneckBlock, other: BottleneckBlock, x: np.ndarray) -> tuple[float, float]:
    """Max |forward difference| and |input-gradient difference| of two blocks."""
    outs, grads = [], []
    oh = x.shape[2] // blk.stride
    probe = np.random.default_rng(1234).standard_normal((x.shape[0], blk.out_width, oh, oh))
    for b in (blk, other):
        v = param(x.copy())
        out = b.forward(v, train=True)
        backward(sum_all(mul(out, constant(probe.astype(x.dtype)))))
        outs.append(out.value)
        grads.append(v.grad)
    return (float(np.max(np.abs(outs[0] - outs[1]))),
            float(np.max(np.abs(grads[0] - grads[1]))))


def cmd_verify_blocks(args) -> int:
    cfg = ModelConfig(args.depth, args.cardinality, args.base_width)
    plan = validate_config(cfg)
    dtypes = (np.float32, np.float64) if args.dtype == "both" else (np.dtype(args.dtype).type,)
    worst = 0.0
    failed = False
    for dt in dtypes:
        tol = args.tolerance if args.tolerance is not None else (1e-4 if dt == np.float32 else 1e-8)
        for stage in plan.stages:
            rng = np.random.default_rng(args.seed + stage.index)
            blk = BottleneckBlock(stage.in_width, stage.inner_width, stage.out_width,
                                  cfg.cardinality, stage.first_stride, "grouped", rng,
                                  dtype=dt, name=f"stage{stage.index}")
            x = np.random.default_rng(args.seed).standard_normal(
                (2, stage.in_width, 8, 8)).astype(dt)
            variants = {"grouped": blk,
                        "split": translate_weights(blk, "split"),
                        "concat": translate_weights(blk, "concat")}
            names = list(variants)
            for i, a in enumerate(names):
                for b in names[i + 1:]:
                    dev_out, dev_grad = _block_deviation(variants[a], variants[b], x)
                    worst = max(worst, dev_out, dev_grad)
                    status = "ok" if max(dev_out, dev_grad) <= tol else "FAIL"
                    if status == "FAIL":
                        failed = True
                    print(f"{np.dtype(dt).name} stage{stage.index} {a:>7} vs {b:<7} "
                          f"out {dev_out:.3e}  grad {dev_grad:.3e}  [{status} <= {tol:g}]")
    print(f"max deviation {worst:.3e}")
    return 1 if failed else 0


def cmd_count_params(args) -> int:
    cfg = ModelConfig(args.depth, args.cardinality, args.base_width,
                      num_classes=args.classes, block_form=args.block_form)
    model = build_model(cfg, np.random.default_rng(0))
    print(count_parameters(model))
    print(model.summary(), end="")
    return 0


def cmd_plot(args) -> int:
    labels = args.labels.split(",") if args.labels else None
    counts = [int(v) for v in args.params.split(",")] if args.params else None
    plotting.emit_plot(args.metrics, args.kind, args.out, labels=labels,
                       param_counts=counts)
    print(f"wrote {args.out}")
    return 0


def cmd_sweep(args) -> int:
    if len(args.vary) != 1:
        print(f"error: sweep varies exactly one axis, got {args.vary}", file=sys.stderr)
        return 1
    axis = args.vary[0]
    values = [int(v) for v in args.values.split(",")]
    if len(values) < 1:
        print("error: empty sweep value list", file=sys.stderr)
        return 1
    dataset = _load_subset(args.data_dir, args.subset)
    train_cfg = _train_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    csvs, labels, counts = [], [], []
    for value in values:
        fields = {"depth": args.depth, "cardinality": args.cardinality,
                  "base_width": args.base_width}
        fields[axis.replace("-", "_")] = value
        model_cfg = ModelConfig(fields["depth"], fields["cardinality"], fields["base_width"],
                                num_classes=dataset.spec.num_classes,
                                block_form=args.block_form)
        validate_config(model_cfg)
        run_dir = os.path.join(args.out_dir, f"{axis}-{value}")
        print(f"sweep point {axis}={value} -> {run_dir}")
        result = train(model_cfg, train_cfg, dataset, run_dir,
                       subset_name=args.subset, log=print)
        run_id = f"{args.subset}-d{model_cfg.depth}-{_series_name(model_cfg)}-seed{args.seed}"
        write_run_manifest(os.path.join(run_dir, "run_manifest.txt"), run_id,
                           model_cfg, train_cfg, args.subset, {
                               "metrics": result.metrics_path,
                               "checkpoint": result.checkpoint_path,
                           })
        csvs.append(result.metrics_path)
        labels.append(_series_name(model_cfg) if axis != "depth" else f"depth{value}")
        counts.append(count_parameters(result.model))
    epoch_plot = os.path.join(args.out_dir, "error_vs_epoch.svg")
    size_plot = os.path.join(args.out_dir, "error_vs_size.svg")
    plotting.emit_plot(csvs, "error-vs-epoch", epoch_plot, labels=labels)
    plotting.emit_plot(csvs, "error-vs-size", size_plot, labels=labels, param_counts=counts)
    files = {f"metrics.{label}": path for label, path in zip(labels, csvs)}
    files["plot.error_vs_epoch"] = epoch_plot
    files["plot.error_vs_size"] = size_plot
    model_cfg = ModelConfig(args.depth, args.cardinality, args.base_width,
                            num_classes=dataset.spec.num_classes, block_form=args.block_form)
    write_run_manifest(os.path.join(args.out_dir, "sweep_manifest.txt"),
                       f"sweep-{axis}-{args.subset}-seed{args.seed}",
                       model_cfg, train_cfg, args.subset, files)
    print(f"sweep complete: {epoch_plot} {size_plot}")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "verify-blocks": cmd_verify_blocks,
    "count-params": cmd_count_params,
    "plot": cmd_plot,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

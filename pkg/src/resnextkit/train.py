"""SGD training loop with a stepped learning-rate schedule and exact resume.

The recipe: momentum SGD with coupled weight decay on every learnable
parameter, batch 128, lr 0.1 dropped by 10x at epochs 150 and 225 over 300
epochs. All per-epoch randomness (shuffle order, crop offsets, flips) is
derived from (seed, epoch), so a run resumed from a checkpoint replays the
exact arithmetic of an uninterrupted run: final parameters and metrics are
bitwise identical in single-threaded mode.
"""

import json
import os
import struct
import time
from dataclasses import dataclass

import numpy as np

from . import data
from .autograd import backward, constant, zero_grads
from .layers import softmax_cross_entropy
from .model import Model, ModelConfig, build_model

CHECKPOINT_MAGIC = b"RNXTCKPT"
CHECKPOINT_VERSION = 1
METRICS_HEADER = "epoch,lr,train_loss,train_acc,test_loss,test_err,wall_sec"


class TrainError(RuntimeError):
    """Raised for recipe violations, divergence, or corrupt checkpoints."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 128
    base_lr: float = 0.1
    lr_drop_epochs: tuple[int, ...] = (150, 225)
    lr_drop_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        drops = self.lr_drop_epochs
        if any(b <= a for a, b in zip(drops, drops[1:])):
            raise ValueError(f"lr drop epochs must be strictly increasing, got {drops}")
        if any(d < 0 or d >= self.epochs for d in drops):
            raise ValueError(f"lr drop epochs {drops} must lie in [0, {self.epochs})")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


@dataclass
class MetricsRow:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_loss: float
    test_err: float
    wall_sec: float

    def to_csv(self) -> str:
        # repr of Python floats round-trips exactly; coerce numpy scalars first
        vals = (self.lr, self.train_loss, self.train_acc,
                self.test_loss, self.test_err, self.wall_sec)
        return f"{self.epoch}," + ",".join(repr(float(v)) for v in vals)

    @staticmethod
    def from_csv(line: str) -> "MetricsRow":
        parts = line.strip().split(",")
        if len(parts) != 7:
            raise TrainError(f"bad metrics row: {line!r}")
        return MetricsRow(int(parts[0]), *(float(p) for p in parts[1:]))


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """base_lr scaled by drop_factor once per drop epoch that has passed."""
    if epoch < 0 or epoch >= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    drops = sum(1 for d in cfg.lr_drop_epochs if d <= epoch)
    return cfg.base_lr * cfg.lr_drop_factor ** drops


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """The per-epoch randomness stream; depends only on (seed, epoch)."""
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


class OptimizerState:
    """Momentum velocity buffers, keyed by parameter name, zero-initialized."""

    def __init__(self, params):
        self.velocity = {p.name: np.zeros_like(p.value) for p in params}


def sgd_step(params, grads, state: OptimizerState, lr: float, cfg: TrainConfig) -> None:
    """v <- momentum*v + (grad + wd*w); w <- w - lr*v, in place."""
    for p, g in zip(params, grads):
        if g is None:
            raise TrainError(f"missing gradient for parameter {p.name}")
        v = state.velocity[p.name]
        step = g + cfg.weight_decay * p.value
        v *= cfg.momentum
        v += step
        p.value -= lr * v


def train_epoch(model: Model, train_split: data.Split, stats: data.NormStats,
                opt_state: OptimizerState, cfg: TrainConfig, epoch: int) -> tuple[float, float]:
    """One shuffled augmented pass; returns (mean loss, accuracy %)."""
    rng = epoch_rng(cfg.seed, epoch)
    lr = lr_at_epoch(cfg, epoch)
    params = model.parameters()
    total_loss = 0.0
    correct = 0
    seen = 0
    for bi, (raw, labels) in enumerate(data.batches(train_split, cfg.batch_size,
                                                    rng=rng, shuffle=True)):
        if cfg.augment:
            raw = data.augment_batch(raw, rng)
        x = data.normalize(raw, stats).astype(model.dtype, copy=False)
        logits = model.forward(constant(x), train=True)
        loss = softmax_cross_entropy(logits, labels)
        if not np.isfinite(loss.value):
            raise TrainError(f"non-finite loss at epoch {epoch}, batch {bi}")
        backward(loss)
        sgd_step(params, [p.grad for p in params], opt_state, lr, cfg)
        zero_grads(params)
        b = labels.shape[0]
        total_loss += float(loss.value) * b
        correct += int((np.argmax(logits.value, axis=1) == labels).sum())
        seen += b
    return total_loss / seen, 100.0 * correct / seen


def evaluate(model: Model, split: data.Split, stats: data.NormStats,
             batch_size: int = 128) -> tuple[float, float]:
    """(mean loss, error %) with batch norm in eval mode and no augmentation."""
    if len(split) == 0:
        raise TrainError("evaluate: empty split")
    total_loss = 0.0
    correct = 0
    for raw, labels in data.batches(split, batch_size, shuffle=False):
        x = data.normalize(raw, stats).astype(model.dtype, copy=False)
        logits = model.forward(constant(x), train=False)
        loss = softmax_cross_entropy(logits, labels)
        total_loss += float(loss.value) * labels.shape[0]
        correct += int((np.argmax(logits.value, axis=1) == labels).sum())
    n = len(split)
    return total_loss / n, 100.0 * (n - correct) / n


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    epoch: int                      # completed epochs
    subset: str | None
    norm_stats: data.NormStats | None
    metrics: list[MetricsRow]
    tensors: dict[str, np.ndarray]  # parameters, running stats, velocities


def checkpoint_from(model: Model, opt_state: OptimizerState, train_cfg: TrainConfig,
                    epoch: int, norm_stats: data.NormStats | None,
                    metrics: list[MetricsRow], subset: str | None = None) -> Checkpoint:
    tensors: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        tensors[name] = p.value
    for name, arr in model.named_state():
        tensors[name] = arr
    for name, v in opt_state.velocity.items():
        tensors[f"velocity/{name}"] = v
    return Checkpoint(model.config, train_cfg, epoch, subset, norm_stats, metrics, tensors)


def save_checkpoint(ck: Checkpoint, path: str) -> None:
    """Versioned binary: magic, version, JSON header, length-prefixed tensors."""
    names = list(ck.tensors)
    header = {
        "model_config": vars(ck.model_config) | {},
        "train_config": {k: (list(v) if isinstance(v, tuple) else v)
                         for k, v in vars(ck.train_config).items()},
        "epoch": ck.epoch,
        "subset": ck.subset,
        "norm_stats": None if ck.norm_stats is None else {
            "mean": [float(v) for v in ck.norm_stats.mean],
            "std": [float(v) for v in ck.norm_stats.std],
        },
        "metrics": [[r.epoch, r.lr, r.train_loss, r.train_acc,
                     r.test_loss, r.test_err, r.wall_sec] for r in ck.metrics],
        "tensors": [{"name": n, "shape": list(ck.tensors[n].shape),
                     "dtype": str(ck.tensors[n].dtype)} for n in names],
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for n in names:
            arr = np.ascontiguousarray(ck.tensors[n])
            payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
            f.write(struct.pack("<Q", len(payload)))
            f.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise TrainError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise TrainError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    (hlen,) = struct.unpack_from("<Q", raw, 12)
    off = 20
    if off + hlen > len(raw):
        raise TrainError(f"{path}: truncated checkpoint header")
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen
    tensors: dict[str, np.ndarray] = {}
    for meta in header["tensors"]:
        if off + 8 > len(raw):
            raise TrainError(f"{path}: truncated at tensor {meta['name']}")
        (nbytes,) = struct.unpack_from("<Q", raw, off)
        off += 8
        if off + nbytes > len(raw):
            raise TrainError(f"{path}: corrupted length for tensor {meta['name']}")
        arr = np.frombuffer(raw[off:off + nbytes], dtype=np.dtype(meta["dtype"]).newbyteorder("<"))
        tensors[meta["name"]] = arr.reshape(meta["shape"]).astype(meta["dtype"]).copy()
        off += nbytes
    if off != len(raw):
        raise TrainError(f"{path}: {len(raw) - off} trailing bytes after last tensor")
    tc = dict(header["train_config"])
    tc["lr_drop_epochs"] = tuple(tc["lr_drop_epochs"])
    ns = header["norm_stats"]
    return Checkpoint(
        model_config=ModelConfig(**header["model_config"]),
        train_config=TrainConfig(**tc),
        epoch=header["epoch"],
        subset=header.get("subset"),
        norm_stats=None if ns is None else data.NormStats(
            mean=np.array(ns["mean"], dtype=np.float64),
            std=np.array(ns["std"], dtype=np.float64)),
        metrics=[MetricsRow(int(m[0]), *map(float, m[1:])) for m in header["metrics"]],
        tensors=tensors,
    )


def restore_model(ck: Checkpoint) -> tuple[Model, OptimizerState]:
    """Rebuild a model and optimizer exactly from checkpoint tensors."""
    model = build_model(ck.model_config, np.random.default_rng(0))
    for name, p in model.named_parameters():
        if name not in ck.tensors:
            raise TrainError(f"checkpoint missing tensor {name}")
        if ck.tensors[name].shape != p.value.shape:
            raise TrainError(f"checkpoint tensor {name} has shape {ck.tensors[name].shape}, "
                             f"model expects {p.value.shape}")
        p.value = ck.tensors[name].copy()
    for bn in model.batchnorms():
        bn.running_mean = ck.tensors[f"{bn.name}.running_mean"].copy()
        bn.running_var = ck.tensors[f"{bn.name}.running_var"].copy()
    opt = OptimizerState(model.parameters())
    for name in opt.velocity:
        key = f"velocity/{name}"
        if key not in ck.tensors:
            raise TrainError(f"checkpoint missing tensor {key}")
        opt.velocity[name] = ck.tensors[key].copy()
    return model, opt


# ---------------------------------------------------------------------------
# run driver
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    model: Model
    metrics: list[MetricsRow]
    checkpoint_path: str
    metrics_path: str


def _append_metrics(path: str, row: MetricsRow) -> None:
    fresh = not os.path.exists(path)
    with open(path, "a", encoding="utf-8") as f:
        if fresh:
            f.write(METRICS_HEADER + "\n")
        f.write(row.to_csv() + "\n")
        f.flush()


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset: data.Dataset,
          out_dir: str, resume_from: str | None = None, stop_after: int | None = None,
          subset_name: str | None = None, log=None) -> RunResult:
    """Run (or resume) the full recipe, writing metrics and a checkpoint.

    stop_after caps the number of completed epochs (for split-run tests);
    resuming from the produced checkpoint continues to train_cfg.epochs.
    """
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    ck_path = os.path.join(out_dir, "checkpoint.bin")

    if resume_from is not None:
        ck = load_checkpoint(resume_from)
        if ck.model_config != model_cfg:
            raise TrainError(f"checkpoint was built for {ck.model_config}, requested {model_cfg}")
        if ck.train_config != train_cfg:
            raise TrainError(f"checkpoint recipe {ck.train_config} differs from requested {train_cfg}")
        model, opt_state = restore_model(ck)
        stats = ck.norm_stats
        metrics = list(ck.metrics)
        start_epoch = ck.epoch
        subset_name = subset_name or ck.subset
    else:
        model = build_model(model_cfg, np.random.default_rng(train_cfg.seed))
        opt_state = OptimizerState(model.parameters())
        stats = data.compute_norm_stats(dataset.train)
        metrics = []
        start_epoch = 0

    if not os.path.exists(metrics_path) and metrics:
        # resumed into a fresh directory: rewrite the prefix history first
        for row in metrics:
            _append_metrics(metrics_path, row)

    end_epoch = train_cfg.epochs if stop_after is None else min(train_cfg.epochs, stop_after)
    for epoch in range(start_epoch, end_epoch):
        t0 = time.perf_counter()
        train_loss, train_acc = train_epoch(model, dataset.train, stats, opt_state,
                                            train_cfg, epoch)
        test_loss, test_err = evaluate(model, dataset.test, stats, train_cfg.batch_size)
        wall = time.perf_counter() - t0
        row = MetricsRow(epoch, lr_at_epoch(train_cfg, epoch), train_loss, train_acc,
                         test_loss, test_err, wall)
        metrics.append(row)
        _append_metrics(metrics_path, row)
        ck = checkpoint_from(model, opt_state, train_cfg, epoch + 1, stats, metrics, subset_name)
        save_checkpoint(ck, ck_path)
        if log is not None:
            log(f"epoch {epoch:>3}  lr {row.lr:.4f}  train loss {train_loss:.4f} "
                f"acc {train_acc:5.1f}%  test err {test_err:5.1f}%  [{wall:.1f}s]")
    return RunResult(model, metrics, ck_path, metrics_path)

"""Training loop with step-decay schedule, evaluation, and checkpointing.

Metric logs hold accuracy fractions; evaluate() reports error rates. With
the deterministic flag set the per-epoch seconds column is written as 0.0 so
two identically seeded runs produce byte-identical logs.
"""

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from .autograd import Graph
from .checkpoint import save_checkpoint, load_checkpoint
from .netspec import NetworkSpec
from .optim import SgdState, sgd_step
from .presets import build_scalenet, even_allocation
from .blocks import DOWNSAMPLE_MODES
from .rng import stream

METRIC_COLUMNS = ("epoch", "lr", "train_loss", "train_top1", "val_top1",
                  "val_top5", "seconds")


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 64
    lr: float = 0.1
    lr_decay: float = 10.0
    milestones: tuple = ()
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    augment_flags: tuple = ()
    deterministic: bool = False
    bn_weight_decay: bool = True
    eval_batch: int = 256

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        ms = list(self.milestones)
        if ms != sorted(ms):
            raise ValueError("milestones must be ascending")
        if any(m >= self.epochs for m in ms):
            raise ValueError("milestones must be smaller than the epoch count")


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for a 1-based epoch: decayed once per crossed milestone."""
    drops = sum(1 for m in cfg.milestones if epoch > m)
    return cfg.lr / cfg.lr_decay ** drops


@dataclass
class TrainResult:
    spec: NetworkSpec
    graph: Graph
    norm_mean: np.ndarray
    norm_std: np.ndarray
    metrics: list = field(default_factory=list)
    best_val_top1: float = 0.0

    def tensors(self):
        out = dict(self.graph.params)
        out.update(self.graph.state)
        out["norm.mean"] = self.norm_mean
        out["norm.std"] = self.norm_std
        return out

    @property
    def final_val_top1_err(self):
        return 1.0 - self.metrics[-1]["val_top1"]


def train(spec: NetworkSpec, train_ds, val_ds, cfg: TrainConfig,
          out_dir=None, log=None) -> TrainResult:
    """SGD training of ``spec`` on ``train_ds`` with per-epoch validation.

    Aborts with a diagnostic on a non-finite loss. Writes metrics.csv plus
    final/best checkpoints when ``out_dir`` is given.
    """
    graph = Graph(spec, dtype=np.float32, seed=cfg.seed)
    if train_ds.mean is None:
        data_mod.normalization_stats(train_ds)
    mean, std = train_ds.mean, train_ds.std
    no_decay = frozenset() if cfg.bn_weight_decay else frozenset(
        p for p in graph.params if p.endswith(".gamma") or p.endswith(".beta"))
    sgd = SgdState(cfg.lr, cfg.momentum, cfg.weight_decay, no_decay=no_decay)
    logits_name = spec.logits_name
    n = len(train_ds)
    result = TrainResult(spec, graph, mean, std)
    best_params = None
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        sgd.learning_rate = lr_at(cfg, epoch)
        perm = stream(cfg.seed, "shuffle", epoch).permutation(n)
        arng = stream(cfg.seed, "augment", epoch)
        losses, correct = [], 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            x = train_ds.images[idx]
            y = train_ds.labels[idx]
            if cfg.augment_flags:
                x = data_mod.augment(x, cfg.augment_flags, arng)
            x = data_mod.normalize(x, mean, std)
            acts = graph.forward(x, labels=y, mode="train")
            loss = float(acts[spec.loss_name])
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss} at epoch {epoch}, batch {start // cfg.batch_size}")
            losses.append(loss)
            correct += int((acts[logits_name].argmax(axis=1) == y).sum())
            grads = graph.backward()
            sgd_step(sgd, graph.params, grads)
        ev = evaluate_graph(graph, val_ds, mean, std, batch=cfg.eval_batch)
        seconds = 0.0 if cfg.deterministic else time.perf_counter() - t0
        row = {
            "epoch": epoch,
            "lr": sgd.learning_rate,
            "train_loss": float(np.mean(losses)),
            "train_top1": correct / n,
            "val_top1": 1.0 - ev.top1_err,
            "val_top5": 1.0 - ev.top5_err if ev.top5_err is not None else "",
            "seconds": seconds,
        }
        result.metrics.append(row)
        if log:
            log(f"epoch {epoch:3d}  lr {row['lr']:.4f}  loss {row['train_loss']:.4f}  "
                f"train {row['train_top1']:.3f}  val {row['val_top1']:.3f}")
        if row["val_top1"] >= result.best_val_top1:
            result.best_val_top1 = row["val_top1"]
            best_params = {p: v.copy() for p, v in result.tensors().items()}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_metrics_csv(result.metrics, os.path.join(out_dir, "metrics.csv"))
        save_checkpoint(os.path.join(out_dir, "final.sanc"), spec.to_text(),
                        result.tensors())
        save_checkpoint(os.path.join(out_dir, "best.sanc"), spec.to_text(),
                        best_params or result.tensors())
    return result


def write_metrics_csv(metrics, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(METRIC_COLUMNS) + "\n")
        for row in metrics:
            f.write(",".join(_fmt_metric(row[c]) for c in METRIC_COLUMNS) + "\n")


def _fmt_metric(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class EvalResult:
    top1_err: float
    top5_err: float  # None when fewer than 5 classes
    loss: float


def evaluate_graph(graph: Graph, ds, mean, std, batch=256,
                   crop_to=None, resize_to=None) -> EvalResult:
    """Inference-mode error rates; optionally resize-shorter then center-crop
    (the 256 -> 224 evaluation pipeline)."""
    n = len(ds)
    top1 = top5 = 0
    losses = []
    want5 = ds.num_classes >= 5
    for start in range(0, n, batch):
        x = ds.images[start:start + batch]
        y = ds.labels[start:start + batch]
        if resize_to:
            x = data_mod.resize_shorter(x, resize_to)
        if crop_to:
            x = data_mod.center_crop(x, crop_to)
        x = data_mod.normalize(x, mean, std)
        acts = graph.forward(x, labels=y, mode="infer")
        losses.append(float(acts[graph.spec.loss_name]) * len(y))
        logits = acts[graph.spec.logits_name]
        top1 += int((logits.argmax(axis=1) == y).sum())
        if want5:
            top5_pred = np.argpartition(logits, -5, axis=1)[:, -5:]
            top5 += int((top5_pred == y[:, None]).any(axis=1).sum())
    return EvalResult(1.0 - top1 / n, (1.0 - top5 / n) if want5 else None,
                      sum(losses) / n)


def evaluate_tensors(spec: NetworkSpec, tensors: dict, ds, batch=256,
                     crop_to=None, resize_to=None) -> EvalResult:
    """Evaluate a checkpoint-shaped tensor dict (params, state, norm stats)."""
    graph = Graph(spec, dtype=np.float32, init=False)
    load_tensors_into(graph, tensors)
    mean = tensors.get("norm.mean")
    std = tensors.get("norm.std")
    if mean is None or std is None:
        if ds.mean is None:
            data_mod.normalization_stats(ds)
        mean, std = ds.mean, ds.std
    return evaluate_graph(graph, ds, mean, std, batch, crop_to, resize_to)


def evaluate_checkpoint(path, ds, batch=256, crop_to=None, resize_to=None):
    spec_text, tensors = load_checkpoint(path)
    spec = NetworkSpec.from_text(spec_text)
    return evaluate_tensors(spec, tensors, ds, batch, crop_to, resize_to)


def load_tensors_into(graph: Graph, tensors: dict):
    for name, arr in graph.params.items():
        if name not in tensors:
            raise KeyError(f"checkpoint missing parameter '{name}'")
        if tensors[name].shape != arr.shape:
            raise ValueError(f"'{name}' shape {tensors[name].shape} != {arr.shape}")
        arr[...] = tensors[name]
    for name in graph.state:
        if name in tensors:
            graph.state[name] = tensors[name].astype(graph.dtype).copy()


def downsample_sweep(base: NetworkSpec, scales, train_ds, val_ds,
                     cfg: TrainConfig, out_csv=None, log=None):
    """Train the even-allocation aggregation net once per downsampling mode
    (max / avg / conv / dilated); returns comparison rows, no ordering asserted."""
    plan = even_allocation(base, scales)
    rows = []
    for mode in DOWNSAMPLE_MODES:
        spec = build_scalenet(base, plan, downsample=mode)
        res = train(spec, train_ds, val_ds, cfg, log=log)
        last = res.metrics[-1]
        rows.append({"mode": mode, "train_loss": last["train_loss"],
                     "val_top1": last["val_top1"], "val_top5": last["val_top5"]})
        if log:
            log(f"downsample={mode}: val top1 {last['val_top1']:.3f}")
    if out_csv:
        with open(out_csv, "w", encoding="utf-8") as f:
            f.write("mode,train_loss,val_top1,val_top5\n")
            for r in rows:
                f.write(f"{r['mode']},{r['train_loss']!r},{r['val_top1']!r},{r['val_top5']!r}\n")
    return rows

"""Losses, optimizer, schedules, evaluation, checkpoints and the epoch loop."""
from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .config import TrainConfig
from .graph import Dataset
from .metrics import Metrics, f1_scores
from .model import HINormer
from .numeric import DTYPE, backward
from .sampler import SamplerConfig, sample_all, stack_contexts

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# losses


def _reduce(per_node: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "sum":
        return per_node.sum()
    if reduction == "mean":
        return per_node.mean()
    if reduction == "none":
        return per_node
    raise ValueError(f"unknown reduction {reduction!r}")


def loss_multiclass(pred: torch.Tensor, labels, reduction: str = "sum") -> torch.Tensor:
    """Softmax cross-entropy of normalized scores ``pred`` (``(B, C)`` or ``(C,)``)."""
    pred = pred.reshape(-1, pred.shape[-1])
    labels = torch.as_tensor(np.asarray(labels), dtype=torch.long).reshape(-1)
    C = pred.shape[-1]
    if len(labels) != len(pred):
        raise ValueError(f"{len(labels)} labels for {len(pred)} predictions")
    if len(labels) and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"label outside [0, {C})")
    per_node = -torch.log_softmax(pred, dim=-1).gather(1, labels[:, None]).squeeze(1)
    return _reduce(per_node, reduction)


def loss_multilabel(pred: torch.Tensor, targets, reduction: str = "sum") -> torch.Tensor:
    """Sigmoid binary cross-entropy summed over classes."""
    pred = pred.reshape(-1, pred.shape[-1])
    t = torch.as_tensor(np.asarray(targets), dtype=DTYPE).reshape(pred.shape)
    if ((t != 0) & (t != 1)).any():
        raise ValueError("multi-label targets must be 0/1")
    per_node = F.binary_cross_entropy_with_logits(pred, t, reduction="none").sum(-1)
    return _reduce(per_node, reduction)


# ----------------------------------------------------------------------------
# optimizer and schedules


class Adam:
    """Adaptive moment estimation with bias correction, applied to named
    parameters in insertion order."""

    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: torch.zeros_like(p) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    @torch.no_grad()
    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else torch.zeros_like(p)
            self.m[k].mul_(b1).add_(g, alpha=1 - b1)
            self.v[k].mul_(b2).addcmul_(g, g, value=1 - b2)
            p.sub_(self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps))


def optimizer_step(opt: Adam, lr: float | None = None) -> None:
    if lr is not None:
        opt.lr = lr
    opt.step()


class ReduceLROnPlateau:
    """Multiply the rate by ``factor`` once the monitored loss has failed to
    improve (relative threshold) for more than ``wait`` consecutive calls."""

    def __init__(self, lr: float, factor: float = 0.5, wait: int = 10, min_lr: float = 1e-6, threshold: float = 1e-4):
        self.lr = lr
        self.factor = factor
        self.wait = wait
        self.min_lr = min_lr
        self.threshold = threshold
        self.best = math.inf
        self.num_bad = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best * (1 - self.threshold):
            self.best = val_loss
            self.num_bad = 0
        else:
            self.num_bad += 1
        if self.num_bad > self.wait:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.num_bad = 0
        return self.lr


def lr_schedule(state: ReduceLROnPlateau, val_loss: float) -> float:
    return state.step(val_loss)


class EarlyStopping:
    """Signals a stop once ``patience`` calls pass without a new best."""

    def __init__(self, patience: int = 50, mode: str = "min"):
        self.patience = patience
        self.mode = mode
        self.best: float | None = None
        self.best_epoch = -1
        self.counter = 0

    def improved(self, value: float) -> bool:
        if self.best is None:
            return True
        return value < self.best if self.mode == "min" else value > self.best

    def step(self, value: float, epoch: int) -> bool:
        if self.improved(value):
            self.best, self.best_epoch, self.counter = value, epoch, 0
        else:
            self.counter += 1
        return self.counter >= self.patience


def early_stop(state: EarlyStopping, val_metric: float, epoch: int) -> bool:
    return state.step(val_metric, epoch)


# ----------------------------------------------------------------------------
# evaluation


class ContextStore:
    """Sampled context arrays for the labeled nodes of a dataset."""

    def __init__(self, ds: Dataset, cfg: TrainConfig):
        self.ds = ds
        self.scfg = SamplerConfig(D=cfg.D, S=cfg.S, policy=cfg.sampler_policy, seed=cfg.seed)
        self._fixed = {}

    def get(self, ids: np.ndarray, epoch: int = 0):
        if self.scfg.policy == "seeded-random" and epoch:
            nodes, _, mask = stack_contexts(sample_all(self.ds.graph, ids, self.scfg, epoch))
            return nodes, mask
        key = ids.tobytes()
        if key not in self._fixed:
            nodes, _, mask = stack_contexts(sample_all(self.ds.graph, ids, self.scfg))
            self._fixed[key] = (nodes, mask)
        return self._fixed[key]


def _loss(model: HINormer, pred, ids, ds: Dataset, reduction: str):
    y = ds.labels.lookup(ids)
    if ds.labels.multilabel:
        return loss_multilabel(pred, y, reduction)
    return loss_multiclass(pred, y, reduction)


def _decisions(pred: torch.Tensor, multilabel: bool) -> np.ndarray:
    if multilabel:
        return (pred > 0).long().numpy()  # sigmoid(x) > 0.5
    return pred.argmax(-1).numpy()


@torch.no_grad()
def evaluate(model: HINormer, ds: Dataset, split: str | np.ndarray, contexts: ContextStore | None = None,
             reduction: str = "mean", chunk: int = 1024) -> Metrics:
    ids = ds.split[split] if isinstance(split, str) else np.asarray(split, dtype=np.int64)
    if len(ids) == 0:
        raise ValueError(f"split {split!r} is empty")
    start = time.perf_counter()
    contexts = contexts or ContextStore(ds, model.cfg)
    was_training = model.training
    model.eval()
    inputs = model.node_inputs()
    preds = []
    for lo in range(0, len(ids), chunk):
        nodes, mask = contexts.get(ids[lo : lo + chunk])
        preds.append(model(nodes, mask, node_inputs=inputs))
    pred = torch.cat(preds)
    model.train(was_training)
    loss = float(_loss(model, pred, ids, ds, reduction))
    micro, macro = f1_scores(ds.labels.lookup(ids), _decisions(pred, ds.labels.multilabel), ds.labels.multilabel)
    return Metrics(micro, macro, loss, time.perf_counter() - start)


# ----------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"HINCKPT\x00"
_CKPT_VERSION = 1


@dataclass
class Checkpoint:
    meta: dict
    tensors: dict[str, np.ndarray]

    @property
    def config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.meta["config"])

    def params(self) -> dict[str, np.ndarray]:
        return {k[len("param/") :]: v for k, v in self.tensors.items() if k.startswith("param/")}


def save_checkpoint(path, model: HINormer, opt: Adam | None, meta: dict) -> None:
    """Versioned container: magic, version, length-prefixed JSON header, then
    little-endian float64 tensors in header order."""
    tensors = {f"param/{k}": p.detach() for k, p in model.named_parameters()}
    if opt is not None:
        tensors.update({f"adam_m/{k}": v for k, v in opt.m.items()})
        tensors.update({f"adam_v/{k}": v for k, v in opt.v.items()})
    entries, blobs, offset = [], [], 0
    for name, t in tensors.items():
        raw = np.ascontiguousarray(t.numpy(), dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = dict(meta)
    header["config"] = model.cfg.to_dict()
    header["num_classes"] = model.num_classes
    header["graph_checksum"] = model.graph.checksum()
    if opt is not None:
        header["adam"] = {"t": opt.t, "lr": opt.lr, "betas": list(opt.betas), "eps": opt.eps}
    header["tensors"] = entries
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IQ", _CKPT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(data[start : start + hlen])
    base = start + hlen
    tensors = {}
    for e in header.pop("tensors"):
        arr = np.frombuffer(data, dtype="<f8", count=e["nbytes"] // 8, offset=base + e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return Checkpoint(header, tensors)


def restore_model(ckpt: Checkpoint, ds: Dataset) -> HINormer:
    if ckpt.meta.get("graph_checksum") not in (None, ds.graph.checksum()):
        raise ValueError("checkpoint was trained on a different graph")
    model = HINormer(ds.graph, ckpt.meta["num_classes"], ckpt.config)
    load_params(model, ckpt.params())
    return model


@torch.no_grad()
def load_params(model: HINormer, params: dict[str, np.ndarray]) -> None:
    own = dict(model.named_parameters())
    if set(own) != set(params):
        raise ValueError(f"parameter names differ: {sorted(set(own) ^ set(params))}")
    for k, p in own.items():
        p.copy_(torch.from_numpy(np.asarray(params[k])))


def snapshot(model: HINormer) -> dict[str, np.ndarray]:
    return {k: p.detach().numpy().copy() for k, p in model.named_parameters()}


# ----------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: HINormer
    history: list[dict] = field(default_factory=list)
    timings: list[float] = field(default_factory=list)
    best_epoch: int = -1
    metrics: dict[str, Metrics] = field(default_factory=dict)
    checkpoint: Path | None = None


def _batches(ids: np.ndarray, batch_size: int, seed: int, epoch: int):
    if batch_size <= 0 or batch_size >= len(ids):
        yield ids
        return
    order = np.random.default_rng([seed, epoch]).permutation(len(ids))
    for lo in range(0, len(ids), batch_size):
        yield ids[order[lo : lo + batch_size]]


def train(ds: Dataset, cfg: TrainConfig, out_dir: str | Path | None = None) -> TrainResult:
    """Train with Adam, plateau decay on validation loss and early stopping on
    validation loss; the best-epoch parameters are restored at the end."""
    if cfg.multilabel != ds.labels.multilabel:
        cfg = cfg.replace(multilabel=ds.labels.multilabel)
    torch.manual_seed(cfg.seed)
    model = HINormer(ds.graph, ds.labels.num_classes, cfg)
    params = dict(model.named_parameters())
    opt = Adam(params, cfg.learning_rate, (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps)
    sched = ReduceLROnPlateau(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_wait, cfg.min_lr)
    stopper = EarlyStopping(cfg.patience, "min")
    contexts = ContextStore(ds, cfg)
    train_ids = ds.split.train
    result = TrainResult(model)
    best = snapshot(model)
    has_val = len(ds.split.val) > 0

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        model.train()
        total, count = 0.0, 0
        for batch in _batches(train_ids, cfg.batch_size, cfg.seed, epoch):
            nodes, mask = contexts.get(batch, epoch)
            pred = model(nodes, mask)
            loss = _loss(model, pred, batch, ds, cfg.loss_reduction)
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite training loss {loss.item()} at epoch {epoch}")
            backward(loss, params)
            optimizer_step(opt)
            total += loss.item() * (len(batch) if cfg.loss_reduction == "mean" else 1)
            count += len(batch)
        train_loss = total / count if cfg.loss_reduction == "mean" else total
        val = evaluate(model, ds, "val" if has_val else "train", contexts, cfg.loss_reduction)
        if not math.isfinite(val.loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        lr = lr_schedule(sched, val.loss)
        opt.lr = lr
        if stopper.improved(val.loss):
            best = snapshot(model)
        stop = early_stop(stopper, val.loss, epoch)
        result.history.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val.loss,
                "val_micro_f1": val.micro_f1,
                "val_macro_f1": val.macro_f1,
                "lr": lr,
            }
        )
        result.timings.append(time.perf_counter() - t0)
        logger.debug("epoch %d %s", epoch, result.history[-1])
        if stop:
            logger.info("early stop at epoch %d (best %d)", epoch, stopper.best_epoch)
            break

    load_params(model, best)
    model.eval()
    result.best_epoch = stopper.best_epoch
    for name in ("train", "val", "test"):
        if len(ds.split[name]):
            result.metrics[name] = evaluate(model, ds, name, contexts, cfg.loss_reduction)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        meta = {
            "epochs_run": len(result.history),
            "best_epoch": stopper.best_epoch,
            "best_val_loss": stopper.best,
            "scheduler": {"factor": cfg.plateau_factor, "wait": cfg.plateau_wait, "min_lr": cfg.min_lr, "lr": sched.lr},
        }
        result.checkpoint = out / "checkpoint.bin"
        save_checkpoint(result.checkpoint, model, opt, meta)
        write_history(out / "metrics.jsonl", result.history)
        with open(out / "timing.jsonl", "w", encoding="utf-8") as fh:
            for epoch, s in enumerate(result.timings):
                fh.write(json.dumps({"epoch": epoch, "seconds": s}) + "\n")
        with open(out / "final_metrics.json", "w", encoding="utf-8") as fh:
            json.dump({k: _metric_record(m) for k, m in result.metrics.items()}, fh, indent=2, sort_keys=True)
    return result


def _metric_record(m: Metrics) -> dict:
    return {"micro_f1": m.micro_f1, "macro_f1": m.macro_f1, "loss": m.loss}


def write_history(path, history: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


@torch.no_grad()
def dump_attention(model: HINormer, ds: Dataset, ids, path, contexts: ContextStore | None = None) -> None:
    """Write post-softmax attention maps of ``ids`` as plain text."""
    ids = np.asarray(ids, dtype=np.int64)
    contexts = contexts or ContextStore(ds, model.cfg)
    model.eval()
    nodes, mask = contexts.get(ids)
    _, maps = model(nodes, mask, return_attention=True)
    with open(path, "w", encoding="utf-8") as fh:
        for b, v in enumerate(ids):
            valid = nodes[b][mask[b]]
            orig = ds.graph.node_ids[valid]
            for layer, amap in enumerate(maps):
                w = amap.weights[b]
                for h in range(w.shape[0]):
                    fh.write(f"# node {ds.graph.node_ids[v]} layer {layer} head {h}\n")
                    fh.write("\t".join(str(x) for x in orig) + "\n")
                    for i in range(len(valid)):
                        fh.write("\t".join(f"{x:.6f}" for x in w[h, i, : len(valid)].tolist()) + "\n")

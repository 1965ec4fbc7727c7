"""Deep-supervision loss, SGD with momentum, and the two-phase training protocol."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from rdsnet import checkpoint, ops
from rdsnet.autograd import ShapeError, Tensor, backward
from rdsnet.topology import forward, graph_spec

log = logging.getLogger(__name__)

OBJECTNESS_EPOCHS = 1
OBJECTNESS_LR = 0.001


class NumericError(RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, epoch=None, step=None, parameter=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.parameter = parameter


@dataclass(frozen=True)
class TrainConfig:
    input_side: int = 320
    epochs: int = 25
    base_lr: float = 0.01
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 10
    weight_decay: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 8
    flip_probability: float = 0.5
    seed: int = 0
    loss_metric: str = "mse"
    gt_resize: str = "bilinear"

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError(f"flip_probability must lie in [0, 1], got {self.flip_probability}")
        for name in ("input_side", "epochs", "lr_decay_every", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.loss_metric not in ops.LOSSES:
            raise ValueError(f"unknown loss metric {self.loss_metric!r}; choose from {sorted(ops.LOSSES)}")
        if self.gt_resize not in ("bilinear", "nearest"):
            raise ValueError(f"gt_resize must be 'bilinear' or 'nearest', got {self.gt_resize!r}")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown training config keys: {', '.join(unknown)}")
        return cls(**data)

    def fingerprint(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class TrainingSample:
    image: np.ndarray  # (3, h, w) in [0, 1]
    ground_truth: np.ndarray  # (h, w) in [0, 1]
    name: str = ""

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ShapeError(f"image must have shape (3, h, w), got {self.image.shape}")
        if self.ground_truth.shape != self.image.shape[1:]:
            raise ShapeError(
                f"ground truth shape {self.ground_truth.shape} does not match image shape {self.image.shape}"
            )


@dataclass
class LossReport:
    per_side: list
    fused: Tensor
    total: Tensor

    def values(self):
        return [t.item() for t in self.per_side], self.fused.item(), self.total.item()


def total_loss(outputs, ground_truth, metric="mse"):
    """Sum of the fused loss and every side loss against the same target."""
    loss_fn = ops.LOSSES[metric]
    gt = ground_truth.data if isinstance(ground_truth, Tensor) else np.asarray(ground_truth, dtype=float)
    if gt.ndim == 3:
        gt = gt[:, None]
    if gt.shape != outputs.fused.shape:
        raise ShapeError(f"ground truth shape {gt.shape} does not match output shape {outputs.fused.shape}")
    per_side = [loss_fn(z, gt) for z in outputs.side_maps]
    fused = loss_fn(outputs.fused, gt)
    total = fused
    for part in per_side:
        total = ops.add(total, part)
    return LossReport(per_side=per_side, fused=fused, total=total)


def sgd_step(params, lr, momentum, weight_decay, velocity):
    """Classic momentum with the decay term folded into the gradient.

    ``v <- momentum * v + grad + weight_decay * param``; ``param <- param - lr * v``.
    ``velocity`` maps parameter names to buffers and is updated in place.
    Parameters without a gradient are treated as having a zero gradient.
    """
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}", parameter=name)
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
            velocity[name] = v
        v *= momentum
        v += g
        v += weight_decay * p.data
        p.data -= lr * v


def lr_at(epoch, config):
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    # repeated multiplication: 0.01 * 0.1 * 0.1 rounds to 1e-4, 0.01 * 0.1 ** 2 does not
    lr = config.base_lr
    for _ in range(epoch // config.lr_decay_every):
        lr *= config.lr_decay_factor
    return lr


def augment_flip(sample, rng, probability=0.5):
    """Mirror image and ground truth together about the vertical axis with the given probability."""
    if probability > 0.0 and rng.random() < probability:
        return TrainingSample(sample.image[:, :, ::-1].copy(), sample.ground_truth[:, ::-1].copy(), sample.name)
    return sample


def _nearest_resize(a, out_h, out_w):
    h, w = a.shape[-2:]
    rows = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(int), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(int), w - 1)
    return a[..., rows[:, None], cols[None, :]]


def resize_sample(sample, side, gt_mode="bilinear"):
    if sample.image.shape[1:] == (side, side):
        return sample
    image = np.clip(ops.bilinear_resize_array(sample.image, side, side), 0.0, 1.0)
    if gt_mode == "nearest":
        gt = _nearest_resize(sample.ground_truth, side, side)
    else:
        gt = np.clip(ops.bilinear_resize_array(sample.ground_truth, side, side), 0.0, 1.0)
    return TrainingSample(image, gt, sample.name)


@dataclass
class TrainResult:
    state: dict
    meta: dict
    trace: list  # rows: epoch, step, l1..lM, lfuse, total, lr

    def checkpoint_bytes(self):
        return checkpoint.encode(self.state, self.meta)


def graph_state(graph, velocity=None):
    arrays = {f"param/{n}": t.data for n, t in graph.params.items()}
    arrays.update({f"buffer/{n}": b for n, b in graph.buffers.items()})
    for n, v in (velocity or {}).items():
        arrays[f"momentum/{n}"] = v
    return arrays


def load_graph_state(graph, arrays):
    for name, t in graph.params.items():
        key = f"param/{name}"
        if key not in arrays:
            raise KeyError(f"checkpoint lacks parameter {name}")
        if arrays[key].shape != t.shape:
            raise ShapeError(f"checkpoint shape {arrays[key].shape} for {name} does not match {t.shape}")
        t.data[...] = arrays[key]
    for name, b in graph.buffers.items():
        b[...] = arrays[f"buffer/{name}"]
    return {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("momentum/")}


def _batch_arrays(samples):
    images = np.stack([s.image for s in samples])
    gts = np.stack([s.ground_truth for s in samples])[:, None]
    return images, gts


def train(graph, dataset, config, phase="sod", on_step=None):
    """Optimise ``graph`` in place on ``dataset`` and return its final state and loss trace.

    ``phase="objectness"`` runs a single epoch at the fixed pre-training
    learning rate; ``phase="sod"`` follows the step schedule of ``config``.
    Samples are resized to ``input_side`` squares, shuffled each epoch from
    the run seed, and the last partial batch is kept.
    """
    if phase not in ("objectness", "sod"):
        raise ValueError(f"phase must be 'objectness' or 'sod', got {phase!r}")
    if not dataset:
        raise ValueError("training dataset is empty")
    samples = [resize_sample(s, config.input_side, config.gt_resize) for s in dataset]
    rng = np.random.default_rng(config.seed)
    epochs = OBJECTNESS_EPOCHS if phase == "objectness" else config.epochs
    velocity = {}
    trace = []
    step = 0
    for epoch in range(epochs):
        lr = OBJECTNESS_LR if phase == "objectness" else lr_at(epoch, config)
        order = rng.permutation(len(samples))
        for start in range(0, len(order), config.batch_size):
            batch = [augment_flip(samples[i], rng, config.flip_probability)
                     for i in order[start:start + config.batch_size]]
            images, gts = _batch_arrays(batch)
            for p in graph.params.values():
                p.zero_grad()
            outputs = forward(graph, images, train=True)
            report = total_loss(outputs, gts, config.loss_metric)
            side, fused, total = report.values()
            if not math.isfinite(total):
                raise NumericError(f"non-finite loss at epoch {epoch} step {step}", epoch=epoch, step=step)
            backward(report.total)
            try:
                sgd_step(graph.params, lr, config.momentum, config.weight_decay, velocity)
            except NumericError as exc:
                exc.epoch, exc.step = epoch, step
                raise
            trace.append([epoch, step, *side, fused, total, lr])
            if on_step is not None:
                on_step(epoch, step, total)
            step += 1
        log.info("%s epoch %d done: last total loss %.6f, lr %g", phase, epoch, trace[-1][-2], lr)
    meta = {
        "config": asdict(config),
        "config_fingerprint": config.fingerprint(),
        "graph": graph_spec(graph),
        "phase": phase,
        "epochs": epochs,
        "steps": step,
    }
    return TrainResult(state=graph_state(graph, velocity), meta=meta, trace=trace)


def trace_header(levels):
    return ["epoch", "step", *[f"l{m}" for m in range(1, levels + 1)], "lfuse", "total", "lr"]


def trace_csv(trace, levels):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(trace_header(levels))
    for row in trace:
        writer.writerow([row[0], row[1], *(repr(float(v)) for v in row[2:])])
    return buf.getvalue()

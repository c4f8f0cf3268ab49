"""Training loop, optimizers, evaluation drivers and the cascade pipeline.

Modes:
  segmentation  minimize the combined (1 - soft IoU) + BCE mask loss,
                tracking mean IoU;
  recognition   minimize weighted categorical cross-entropy on class labels,
                tracking accuracy;
  joint         both at once (unit weighting) on detection-resolution inputs
                that carry masks AND labels.

Everything is seeded: shuffling, dropout, and per-(epoch, sample)
augmentation streams are all derived from the single config seed, so a rerun
reproduces the loss curves exactly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .augment import AugmentationSpec, augment
from .data import (
    Sample, resize_array_nn, resize_nn, samples_content_hash, split_by_id,
    standardize,
)
from .losses import (
    ClassWeights, PixelPair, class_weights, combined_loss, one_hot,
    weighted_categorical_crossentropy,
)
from .metrics import EvalReport, cls_metrics, seg_metrics
from .network import DermoNet
from .rng import derive_rng, make_rng
from .roi import extract_roi
from .tensor import NumericsError, Tape, Tensor, backward, no_grad
from .weights import save_weights

logger = logging.getLogger(__name__)

MODES = ("segmentation", "recognition", "joint")


@dataclass
class TrainConfig:
    mode: str = "segmentation"
    epochs: int = 50
    batch_size: int = 4
    optimizer: str = "adam"              # adam | sgd-momentum
    learning_rate: float = 1e-3
    momentum: float = 0.9
    betas: tuple = (0.9, 0.999)
    seed: int = 0
    class_weight_mode: str = "inverse-frequency"
    augment_spec: Optional[AugmentationSpec] = None
    early_stop_patience: int = 20
    val_fraction: float = 0.2
    target_train_metric: Optional[float] = None  # stop early once reached
    checkpoint_every: int = 0                    # epochs; 0 = best only

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainState:
    epochs_run: int = 0
    history: list = field(default_factory=list)  # dicts: epoch/split/loss/metric
    best_metric: float = -np.inf
    best_epoch: int = -1
    stopped_early: bool = False

    def record(self, epoch: int, split: str, loss: float, metric: float) -> None:
        self.history.append({"epoch": epoch, "split": split,
                             "loss": loss, "metric": metric})

    def curve(self, split: str):
        return [h for h in self.history if h["split"] == split]

    def curves_csv(self) -> str:
        lines = ["epoch,split,loss,metric"]
        for h in self.history:
            lines.append(f"{h['epoch']},{h['split']},{h['loss']:.8f},"
                         f"{h['metric']:.8f}")
        return "\n".join(lines) + "\n"


# -- optimizers -----------------------------------------------------------------


class SGDMomentum:
    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict = {}

    def step(self, params: dict) -> None:
        for name, p in params.items():
            if p.grad is None:
                continue
            v = self.velocity.get(name)
            v = p.grad if v is None else self.momentum * v + p.grad
            self.velocity[name] = v
            p.data -= self.lr * v


class Adam:
    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict) -> None:
        self.t += 1
        b1t = 1.0 - self.b1 ** self.t
        b2t = 1.0 - self.b2 ** self.t
        for name, p in params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m.get(name, 0.0) * self.b1 + (1 - self.b1) * g
            v = self.v.get(name, 0.0) * self.b2 + (1 - self.b2) * g * g
            self.m[name] = m
            self.v[name] = v
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.learning_rate, cfg.betas)
    return SGDMomentum(cfg.learning_rate, cfg.momentum)


# -- batch assembly ----------------------------------------------------------------


def init_weights(net: DermoNet, seed: int) -> None:
    """He-normal kernels (per-layer fan-in), zero biases, unit batchnorm."""
    net.init_weights(seed)


def _prepared_sample(sample: Sample, hw, needs_mask: bool):
    img = resize_nn(sample.image, *hw)
    x = standardize(img)
    mask = None
    if needs_mask:
        if sample.mask is None:
            raise ValueError(f"{sample.id}: this mode needs ground-truth masks")
        mask = (resize_nn(sample.mask, *hw).pixels[:, :, :1] > 127).astype(np.float64)
    return x, mask


def _make_batches(samples, batch_size: int, rng) -> list:
    order = rng.permutation(len(samples))
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def _batch_arrays(samples, idxs, hw, mode: str, num_classes: int,
                  aug_spec, seed: int, epoch: int):
    xs, masks, labels = [], [], []
    ids = []
    for i in idxs:
        s = samples[i]
        if aug_spec is not None:
            s = augment(s, aug_spec, derive_rng(seed, "aug", s.id, epoch))
        x, mask = _prepared_sample(s, hw, needs_mask=mode in ("segmentation", "joint"))
        xs.append(x)
        ids.append(s.id)
        if mask is not None:
            masks.append(mask)
        if mode in ("recognition", "joint"):
            if s.label is None:
                raise ValueError(f"{s.id}: this mode needs class labels")
            labels.append(s.label)
    x_arr = np.stack(xs)
    mask_arr = np.stack(masks) if masks else None
    label_arr = np.array(labels, dtype=np.int64) if labels else None
    onehot = one_hot(label_arr, num_classes) if label_arr is not None else None
    return x_arr, mask_arr, label_arr, onehot, ids


# -- the training loop ----------------------------------------------------------------


def train(net: DermoNet, samples, cfg: TrainConfig, out_dir=None,
          val_samples=None) -> TrainState:
    """Mini-batch gradient descent; returns the per-epoch history and saves
    the best-validation checkpoint (plus manifest and curves) to out_dir."""
    if val_samples is None:
        train_split, val_split = split_by_id(samples, cfg.val_fraction)
    else:
        train_split, val_split = list(samples), list(val_samples)
    if not train_split or not val_split:
        raise ValueError("empty train or validation split")

    every = list(train_split) + list(val_split)
    if cfg.mode in ("recognition", "joint"):
        missing = [s.id for s in every if s.label is None]
        if missing:
            raise ValueError(f"mode {cfg.mode!r} needs class labels on every "
                             f"sample (missing: {missing[:3]})")
    if cfg.mode in ("segmentation", "joint"):
        missing = [s.id for s in every if s.mask is None]
        if missing:
            raise ValueError(f"mode {cfg.mode!r} needs ground-truth masks on "
                             f"every sample (missing: {missing[:3]})")

    num_classes = net.config.num_classes
    weights = ClassWeights.uniform(num_classes)
    if cfg.mode in ("recognition", "joint"):
        counts = np.bincount(np.array([s.label for s in train_split], dtype=np.int64),
                             minlength=num_classes)
        weights = class_weights(counts, cfg.class_weight_mode)

    optimizer = make_optimizer(cfg)
    state = TrainState()
    net.set_dropout_rng(derive_rng(cfg.seed, "dropout"))
    shuffle_rng = make_rng(derive_rng(cfg.seed, "shuffle"))
    hw = net.expected_hw
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    since_best = 0
    for epoch in range(cfg.epochs):
        net.set_mode("train")
        epoch_losses = []
        train_metric_parts = []
        for batch_idx, idxs in enumerate(
                _make_batches(train_split, cfg.batch_size, shuffle_rng)):
            x, masks, labels, onehot, ids = _batch_arrays(
                train_split, idxs, hw, cfg.mode, num_classes,
                cfg.augment_spec, cfg.seed, epoch)
            with Tape() as tape:
                try:
                    loss, metric = _training_step(net, cfg.mode, x, masks,
                                                  onehot, labels, weights)
                    backward(loss)
                except NumericsError as exc:
                    raise NumericsError(
                        f"non-finite value in epoch {epoch} batch {batch_idx} "
                        f"(ids {ids}): {exc}") from exc
                finally:
                    tape.clear()
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise NumericsError(f"NaN loss in epoch {epoch} batch "
                                    f"{batch_idx} (ids {ids})")
            optimizer.step(net.named_params())
            net.zero_grad()
            epoch_losses.append((loss_val, len(idxs)))
            train_metric_parts.append((metric, len(idxs)))

        train_loss = _weighted_mean(epoch_losses)
        train_metric = _weighted_mean(train_metric_parts)
        state.record(epoch, "train", train_loss, train_metric)

        val_loss, val_metric = _validation_pass(net, val_split, cfg, weights)
        state.record(epoch, "val", val_loss, val_metric)
        state.epochs_run = epoch + 1
        logger.info("epoch %d: train loss %.5f metric %.4f | "
                    "val loss %.5f metric %.4f",
                    epoch, train_loss, train_metric, val_loss, val_metric)

        if val_metric > state.best_metric:
            state.best_metric = val_metric
            state.best_epoch = epoch
            since_best = 0
            if out is not None:
                save_weights(net, out / "best.ddwf")
        else:
            since_best += 1
        if out is not None and cfg.checkpoint_every and \
                (epoch + 1) % cfg.checkpoint_every == 0:
            save_weights(net, out / f"epoch{epoch:04d}.ddwf")

        if (cfg.target_train_metric is not None
                and train_metric >= cfg.target_train_metric):
            state.stopped_early = True
            break
        if since_best > cfg.early_stop_patience:
            state.stopped_early = True
            break

    if out is not None:
        save_weights(net, out / "last.ddwf")
        manifest = {
            "config": _config_dict(cfg),
            "seed": cfg.seed,
            "dataset_hash": samples_content_hash(list(train_split) + list(val_split)),
            "epochs_run": state.epochs_run,
            "best_epoch": state.best_epoch,
            "best_val_metric": state.best_metric,
            "stopped_early": state.stopped_early,
            "param_count": net.param_count,
        }
        (out / "run.json").write_text(json.dumps(manifest, indent=2,
                                                 sort_keys=True) + "\n")
        (out / "curves.csv").write_text(state.curves_csv())
    return state


def _config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    if cfg.augment_spec is not None:
        d["augment_spec"] = asdict(cfg.augment_spec)
    return d


def _weighted_mean(pairs) -> float:
    total = sum(n for _, n in pairs)
    return float(sum(v * n for v, n in pairs) / total)


def _training_step(net, mode, x, masks, onehot, labels, weights):
    """Forward + loss for one batch; returns (loss Tensor, batch metric)."""
    xt = Tensor(x)
    if mode == "segmentation":
        from .tensor import sigmoid
        probs = sigmoid(net.mask_logits(xt))
        loss = combined_loss(PixelPair(Tensor(masks), probs))
        metric = _batch_miou(masks, probs.data)
        return loss, metric
    if mode == "recognition":
        probs = net.class_probs(xt)
        loss = weighted_categorical_crossentropy(probs, onehot, weights)
        metric = float((probs.data.argmax(axis=1) == labels).mean())
        return loss, metric
    mask_probs, cls_probs = net.forward(xt)
    seg_loss = combined_loss(PixelPair(Tensor(masks), mask_probs))
    cls_loss = weighted_categorical_crossentropy(cls_probs, onehot, weights)
    loss = seg_loss + cls_loss
    metric = 0.5 * (_batch_miou(masks, mask_probs.data)
                    + float((cls_probs.data.argmax(axis=1) == labels).mean()))
    return loss, metric


def _batch_miou(gt, probs) -> float:
    return seg_metrics([(gt[i, :, :, 0], probs[i, :, :, 0])
                        for i in range(len(gt))]).miou


def _validation_pass(net, val_split, cfg, weights):
    net.set_mode("eval")
    losses, metrics = [], []
    for i in range(0, len(val_split), cfg.batch_size):
        chunk = val_split[i:i + cfg.batch_size]
        x, masks, labels, onehot, _ = _batch_arrays(
            chunk, range(len(chunk)), net.expected_hw, cfg.mode,
            net.config.num_classes, None, cfg.seed, 0)
        with no_grad():
            loss, metric = _training_step(net, cfg.mode, x, masks,
                                          onehot, labels, weights)
        losses.append((loss.item(), len(chunk)))
        metrics.append((metric, len(chunk)))
    return _weighted_mean(losses), _weighted_mean(metrics)


# -- evaluation drivers ----------------------------------------------------------------


def predict_masks(net: DermoNet, samples, batch_size: int = 4):
    """Eval-mode mask probabilities at network resolution, [N,H,W] float."""
    from .tensor import sigmoid
    net.set_mode("eval")
    hw = net.config.input_hw_detection
    outs = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        x = np.stack([standardize(resize_nn(s.image, *hw)) for s in chunk])
        with no_grad():
            probs = sigmoid(net.mask_logits(Tensor(x)))
        outs.append(probs.data[:, :, :, 0])
    return np.concatenate(outs, axis=0)


def predict_class_probs(net: DermoNet, images, batch_size: int = 8):
    """Eval-mode class probabilities for a list of Images, [N,C] float."""
    net.set_mode("eval")
    hw = net.expected_hw
    outs = []
    for i in range(0, len(images), batch_size):
        chunk = images[i:i + batch_size]
        x = np.stack([standardize(resize_nn(img, *hw)) for img in chunk])
        with no_grad():
            probs = net.class_probs(Tensor(x))
        outs.append(probs.data)
    return np.concatenate(outs, axis=0)


def evaluate(net: DermoNet, samples, mode: str, batch_size: int = 4) -> EvalReport:
    """Deterministic eval-mode metrics over a dataset.

    Segmentation compares at network resolution (ground truth resized the
    same way as the input).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    seg = cls_part = None
    prob_matrix = truths = None
    names = net.config.class_names
    if mode in ("segmentation", "joint"):
        hw = net.config.input_hw_detection
        preds = predict_masks(net, samples, batch_size)
        pairs = []
        for i, s in enumerate(samples):
            if s.mask is None:
                raise ValueError(f"{s.id}: segmentation evaluation needs masks")
            gt = (resize_nn(s.mask, *hw).pixels[:, :, 0] > 127).astype(float)
            pairs.append((gt, preds[i]))
        seg = seg_metrics(pairs)
    if mode in ("recognition", "joint"):
        labeled = [s for s in samples if s.label is not None]
        if not labeled:
            raise ValueError("recognition evaluation needs labeled samples")
        prob_matrix = predict_class_probs(net, [s.image for s in labeled],
                                          batch_size=max(batch_size, 8))
        truths = np.array([s.label for s in labeled], dtype=np.int64)
        preds_cls = prob_matrix.argmax(axis=1)
        cls_part = cls_metrics(preds_cls, truths, net.config.num_classes)
    return EvalReport.from_parts(seg=seg, cls_part=cls_part,
                                 prob_matrix=prob_matrix, truths=truths,
                                 class_names=names)


# -- cascade: detection -> ROI -> recognition ------------------------------------------


def prepare_recognition_samples(samples, seg_net: Optional[DermoNet],
                                hw, threshold: float = 0.5):
    """Crop every sample to its lesion ROI (predicted when a segmentation
    network is given, else oracle ground-truth masks) and resize to the
    recognition resolution.  Returns (crops, degenerate_ids)."""
    crops, degenerate = [], []
    if seg_net is not None:
        probs = predict_masks(seg_net, samples)
    for i, s in enumerate(samples):
        if seg_net is not None:
            full = resize_array_nn(probs[i], s.image.height, s.image.width)
        else:
            if s.mask is None:
                raise ValueError(f"{s.id}: oracle cascade needs ground-truth masks")
            full = (s.mask.pixels[:, :, 0] > 127).astype(np.float64)
        _, crop, was_degenerate = extract_roi(full, s.image, threshold)
        if was_degenerate:
            degenerate.append(s.id)
        crops.append(Sample(image=resize_nn(crop, *hw), mask=None,
                            label=s.label, id=s.id))
    return crops, degenerate


def cascade_pipeline(seg_net: Optional[DermoNet], cls_net: DermoNet,
                     samples, threshold: float = 0.5) -> EvalReport:
    """Segment -> crop -> resize -> classify; classification metrics over the
    dataset.  ``seg_net=None`` substitutes oracle masks (plumbing check)."""
    hw = cls_net.config.input_hw_recognition
    crops, degenerate = prepare_recognition_samples(samples, seg_net, hw,
                                                    threshold)
    labeled = [c for c in crops if c.label is not None]
    if not labeled:
        raise ValueError("cascade evaluation needs labeled samples")
    prob_matrix = predict_class_probs(cls_net, [c.image for c in labeled])
    truths = np.array([c.label for c in labeled], dtype=np.int64)
    preds = prob_matrix.argmax(axis=1)
    report = EvalReport.from_parts(
        cls_part=cls_metrics(preds, truths, cls_net.config.num_classes),
        prob_matrix=prob_matrix, truths=truths,
        class_names=cls_net.config.class_names,
        degenerate_mask_ids=degenerate)
    return report

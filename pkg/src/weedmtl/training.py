"""Training loop, checkpointing, and whole-model evaluation.

Everything is deterministic given the seed: batch order comes from
SeedSequence([seed, epoch]), per-sample augmentation from
SeedSequence([seed, crc32(sample_id), epoch]), and dropout from
SeedSequence([seed, iteration]). Because no state leaks between those
streams, resuming from a checkpoint reproduces the uninterrupted run
bitwise, and two runs with the same flags write identical loss CSVs.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ArraySample, AugConfig, augment, class_pixel_weights, normalize_image
from .errors import ConfigError, DataError, DimensionError
from .losses import LossTargets, LossWeights, multi_task_loss
from .metrics import (MetricsReport, classification_scores, confusion_matrix,
                      regression_scores, segmentation_scores)
from .model import ModelConfig, MultiTaskNet, build
from .optim import Adam, ScheduleSpec, lr_at
from .tensor import Tensor, no_grad

CSV_HEADER = "iter,lr,loss_total,loss_seg,loss_aux,loss_height,loss_week"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    base_lr: float = 2e-4
    warmup_iters: int = 1500
    min_lr: float = 0.0
    warmup_start_factor: float = 0.1
    weight_decay: float = 1e-4
    loss_weights: LossWeights = field(default_factory=LossWeights)
    use_class_weights: bool = True
    aug: AugConfig | None = None  # None: normalize only, no geometric augmentation
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size <= 0:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")

    def schedule_for(self, num_samples: int) -> ScheduleSpec:
        per_epoch = max(math.ceil(num_samples / self.batch_size), 1)
        total = max(self.epochs * per_epoch, 1)
        return ScheduleSpec(base_lr=self.base_lr, warmup_iters=self.warmup_iters,
                            total_iters=total, min_lr=self.min_lr,
                            warmup_start_factor=self.warmup_start_factor)


@dataclass
class TrainResult:
    rows: list[dict]
    iterations: int
    schedule: ScheduleSpec
    class_weights: np.ndarray | None
    optimizer: Adam


def _aug_seed(seed: int, sample_id: str, epoch: int) -> list[int]:
    return [seed, zlib.crc32(sample_id.encode()), epoch, 0xA6]


def _dropout_seed(seed: int, iteration: int) -> int:
    return int(np.random.SeedSequence([seed, iteration, 0xD0]).generate_state(1)[0])


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, 0xE7]))
    return rng.permutation(n)


def _prepare_batch(samples: list[ArraySample], cfg: TrainConfig,
                   epoch: int) -> tuple[np.ndarray, LossTargets]:
    images, masks, heights, weeks = [], [], [], []
    for s in samples:
        if cfg.aug is not None:
            img, msk = augment(s.image, s.mask, cfg.aug,
                               _aug_seed(cfg.seed, s.id, epoch))
        else:
            img, msk = normalize_image(s.image), s.mask
        images.append(img)
        masks.append(msk)
        heights.append(s.height_cm)
        weeks.append(s.week - 1)  # week k maps to class k-1
    x = np.stack(images).astype(np.float32)
    if x.shape[2] % 32 or x.shape[3] % 32:
        raise DimensionError(f"batch spatial size {x.shape[2:]}, must be multiples of 32")
    return x, LossTargets(mask=np.stack(masks),
                          height_cm=np.asarray(heights, dtype=np.float32),
                          week=np.asarray(weeks, dtype=np.int64))


def train(model: MultiTaskNet, samples: list[ArraySample], cfg: TrainConfig,
          *, optimizer: Adam | None = None, start_iteration: int = 0,
          log_path: str | Path | None = None) -> TrainResult:
    """Run the loop; returns per-iteration records (iter, lr, loss terms)."""
    cfg.validate()
    if not samples:
        raise DataError("training needs a non-empty sample list")
    schedule = cfg.schedule_for(len(samples))
    schedule.validate()

    class_weights = None
    if cfg.use_class_weights and "seg" in model.config.tasks:
        class_weights = class_pixel_weights(samples, model.config.num_classes)

    if optimizer is None:
        optimizer = Adam(model.parameters(), weight_decay=cfg.weight_decay)

    n = len(samples)
    per_epoch = max(math.ceil(n / cfg.batch_size), 1)
    total_iters = cfg.epochs * per_epoch
    model.train()

    rows: list[dict] = []
    iteration = start_iteration
    start_epoch, skip_batches = divmod(start_iteration, per_epoch)
    for epoch in range(start_epoch, cfg.epochs):
        order = _epoch_order(cfg.seed, epoch, n)
        offset = skip_batches if epoch == start_epoch else 0
        for b in range(offset, per_epoch):
            ids = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch = [samples[i] for i in ids]
            x, targets = _prepare_batch(batch, cfg, epoch)

            lr = lr_at(schedule, iteration)
            out = model(Tensor(x), seed=_dropout_seed(cfg.seed, iteration))
            loss, parts = multi_task_loss(out, targets, cfg.loss_weights, class_weights)
            if not math.isfinite(parts["total"]):
                raise DataError(f"non-finite loss at iteration {iteration} on batch "
                                f"{[s.id for s in batch]}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step(lr)

            rows.append({
                "iter": iteration, "lr": lr,
                "loss_total": parts["total"],
                "loss_seg": parts.get("seg", 0.0),
                "loss_aux": parts.get("aux", 0.0),
                "loss_height": parts.get("height", 0.0),
                "loss_week": parts.get("week", 0.0),
            })
            iteration += 1

    if log_path is not None:
        write_loss_csv(rows, log_path)
    return TrainResult(rows=rows, iterations=total_iters, schedule=schedule,
                       class_weights=class_weights, optimizer=optimizer)


def write_loss_csv(rows: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(",".join([str(int(r["iter"]))] + [
            repr(float(r[k])) for k in
            ("lr", "loss_total", "loss_seg", "loss_aux", "loss_height", "loss_week")]))
    path.write_text("\n".join(lines) + "\n")


def moving_average(values, window: int = 10) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size < window:
        raise DataError(f"need at least {window} values, got {v.size}")
    kernel = np.full(window, 1.0 / window)
    return np.convolve(v, kernel, mode="valid")


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path: str | Path, model: MultiTaskNet,
                    optimizer: Adam | None = None, *, iteration: int = 0,
                    extra: dict | None = None) -> None:
    """Single-file container: parameters, buffers, moments, and JSON meta."""
    arrays = model.state_arrays()
    meta = {
        "version": CHECKPOINT_VERSION,
        "iteration": int(iteration),
        "model_config": model.config.to_dict(),
        "adam_t": optimizer.t if optimizer is not None else None,
    }
    if extra:
        meta.update(extra)
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, meta=np.bytes_(json.dumps(meta).encode()), **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files if k != "meta"}
        meta = json.loads(bytes(z["meta"].item()).decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"checkpoint version {meta.get('version')} unsupported "
                        f"(expected {CHECKPOINT_VERSION})")
    return meta, arrays


def restore_model(path: str | Path, *, dtype=np.float32) -> tuple[MultiTaskNet, dict, dict]:
    meta, arrays = load_checkpoint(path)
    model = build(ModelConfig.from_dict(meta["model_config"]), dtype=dtype)
    model.load_state_arrays(arrays)
    return model, meta, arrays


def restore_optimizer(model: MultiTaskNet, meta: dict, arrays: dict,
                      *, weight_decay: float = 1e-4) -> Adam:
    opt = Adam(model.parameters(), weight_decay=weight_decay)
    if meta.get("adam_t") is None:
        raise DataError("checkpoint holds no optimizer state")
    opt.load_state_arrays(arrays, meta["adam_t"])
    return opt


# ---------------------------------------------------------------------------
# evaluation

def evaluate_model(model: MultiTaskNet, samples: list[ArraySample]) -> MetricsReport:
    """Batch-1 evaluation over decoded samples; aux heads stay silent."""
    if not samples:
        raise DataError("evaluation needs a non-empty sample list")
    model.eval()
    tasks = model.config.tasks
    cm = np.zeros((model.config.num_classes,) * 2, dtype=np.int64)
    heights_pred, heights_gt, weeks_pred, weeks_gt = [], [], [], []
    with no_grad():
        for s in samples:
            x = normalize_image(s.image)[None].astype(np.float32)
            out = model(Tensor(x))
            if out.seg_logits is not None:
                pred = np.argmax(out.seg_logits.data[0], axis=0)
                cm += confusion_matrix(pred, s.mask, model.config.num_classes)
            if out.height is not None:
                heights_pred.append(float(out.height.data.reshape(-1)[0]))
                heights_gt.append(s.height_cm)
            if out.week_logits is not None:
                weeks_pred.append(int(np.argmax(out.week_logits.data[0])))
                weeks_gt.append(s.week - 1)
    report = MetricsReport(num_samples=len(samples))
    if "seg" in tasks:
        report.segmentation = segmentation_scores(cm)
    if "height" in tasks:
        report.height = regression_scores(heights_pred, heights_gt)
    if "week" in tasks:
        report.week = classification_scores(np.asarray(weeks_pred),
                                            np.asarray(weeks_gt),
                                            model.config.num_weeks)
    return report

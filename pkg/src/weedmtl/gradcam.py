"""Gradient-weighted class activation maps over the aggregated features.

The map lives at the aggregation resolution (H/8 x W/8): channel weights
are the spatial means of the target's gradient there, the weighted sum is
rectified and min-max normalized into [0, 1]. A map that rectifies to a
constant carries no information; it is returned as zeros with a degenerate
flag instead of dividing by zero.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError
from .model import MultiTaskNet
from .tensor import Tensor

CAM_TASKS = ("seg", "height", "week")


def grad_cam(model: MultiTaskNet, image: np.ndarray | Tensor,
             task: str) -> tuple[np.ndarray, bool]:
    """Heatmap for one image; returns ([1, 1, H/8, W/8] in [0,1], degenerate).

    Targets: seg sums the predicted-class logit over each pixel's argmax
    class; height uses the raw regression output; week uses the argmax
    class logit. The model runs in eval mode.
    """
    if task not in CAM_TASKS:
        raise ConfigError(f"unknown Grad-CAM task {task!r}; choose from {CAM_TASKS}")
    if task not in model.config.tasks:
        raise ConfigError(f"task {task!r} is not enabled on this model "
                          f"(tasks={model.config.tasks})")
    x = image if isinstance(image, Tensor) else Tensor(np.asarray(image))
    if x.ndim != 4 or x.shape[0] != 1:
        raise DimensionError(f"grad_cam expects a single [1,3,H,W] image, got {x.shape}")

    model.eval()
    capture: dict[str, Tensor] = {}
    out = model(x, capture=capture)
    feats = capture["aggregated"]

    if task == "seg":
        logits = out.seg_logits
        pred = np.argmax(logits.data, axis=1)  # [1, H, W]
        onehot = np.zeros(logits.shape, dtype=logits.dtype)
        np.put_along_axis(onehot, pred[:, None], 1.0, axis=1)
        target = (logits * Tensor(onehot)).sum()
    elif task == "height":
        target = out.height.sum()
    else:
        pred = int(np.argmax(out.week_logits.data[0]))
        onehot = np.zeros(out.week_logits.shape, dtype=out.week_logits.dtype)
        onehot[0, pred] = 1.0
        target = (out.week_logits * Tensor(onehot)).sum()

    target.backward()
    if feats.grad is None:
        raise ConfigError("no gradient reached the aggregated features")
    grad = feats.grad
    for p in model.parameters():
        p.grad = None  # only the feature gradient is wanted; free the rest

    cam = np.maximum((grad.mean(axis=(2, 3), keepdims=True)
                      * feats.data).sum(axis=1), 0.0)        # [1, h, w]
    lo, hi = float(cam.min()), float(cam.max())
    if hi - lo <= 0.0:
        return np.zeros((1, 1) + cam.shape[1:], dtype=np.float32), True
    cam = (cam - lo) / (hi - lo)
    return cam[:, None].astype(np.float32), False

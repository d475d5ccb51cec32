"""Multi-task training objective.

total = w_seg * WCE(seg) + w_aux * sum_k WCE(aux_k) + w_height * MSE + w_week * CE

WCE is per-pixel softmax cross-entropy with optional per-class weights
(weighted mean, so uniform weights reduce to the plain mean). Terms for
disabled tasks are simply absent; the reported total is exactly the
left-to-right sum of the weighted contributions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError
from .model import ForwardOutput
from .ops import softmax_cross_entropy
from .tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    seg: float = 1.0
    aux: float = 1.0
    height: float = 1.0
    week: float = 1.0


@dataclass(frozen=True)
class LossTargets:
    """Ground truth for one batch; unused entries may stay None."""
    mask: np.ndarray | None = None        # [N, H, W] int
    height_cm: np.ndarray | None = None   # [N] float
    week: np.ndarray | None = None        # [N] int, 0-based (week k -> k - 1)


def _check_labels(labels: np.ndarray, limit: int, what: str) -> None:
    flat = labels.reshape(labels.shape[0], -1)
    bad = (flat < 0) | (flat >= limit)
    if bad.any():
        sample = int(np.argmax(bad.any(axis=1)))
        value = int(flat[sample][np.argmax(bad[sample])])
        raise DataError(f"{what} label {value} at sample {sample} outside [0, {limit})")


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = pred.reshape(-1) - Tensor(np.asarray(target, dtype=pred.dtype))
    return (diff * diff).mean()


def multi_task_loss(outputs: ForwardOutput, targets: LossTargets,
                    weights: LossWeights = LossWeights(),
                    class_weights: np.ndarray | None = None) -> tuple[Tensor, dict]:
    """Weighted sum of the enabled task losses.

    Returns the scalar total and a breakdown dict holding each weighted
    contribution as a float plus the unweighted raw term values.
    """
    terms: list[tuple[str, float, Tensor]] = []

    if outputs.seg_logits is not None:
        if targets.mask is None:
            raise DimensionError("segmentation output present but targets.mask is None")
        _check_labels(targets.mask, outputs.seg_logits.shape[1], "segmentation")
        terms.append(("seg", weights.seg,
                      softmax_cross_entropy(outputs.seg_logits, targets.mask, class_weights)))
        if outputs.aux_seg_logits:
            aux_total = None
            for logits in outputs.aux_seg_logits:
                if logits.shape != outputs.seg_logits.shape:
                    raise DimensionError(
                        f"aux logits {logits.shape} do not match seg {outputs.seg_logits.shape}")
                term = softmax_cross_entropy(logits, targets.mask, class_weights)
                aux_total = term if aux_total is None else aux_total + term
            terms.append(("aux", weights.aux, aux_total))

    if outputs.height is not None:
        if targets.height_cm is None:
            raise DimensionError("height output present but targets.height_cm is None")
        terms.append(("height", weights.height, mse(outputs.height, targets.height_cm)))

    if outputs.week_logits is not None:
        if targets.week is None:
            raise DimensionError("week output present but targets.week is None")
        _check_labels(np.asarray(targets.week), outputs.week_logits.shape[1], "week")
        terms.append(("week", weights.week,
                      softmax_cross_entropy(outputs.week_logits, np.asarray(targets.week))))

    if not terms:
        raise DimensionError("no task outputs to compute a loss from")

    total: Tensor | None = None
    breakdown: dict[str, float] = {}
    for name, weight, term in terms:
        weighted = term * float(weight)
        breakdown[name] = weighted.item()
        breakdown[f"{name}_raw"] = term.item()
        total = weighted if total is None else total + weighted
    breakdown["total"] = total.item()
    return total, breakdown

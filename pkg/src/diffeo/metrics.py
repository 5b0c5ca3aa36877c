"""Overlap and similarity measures for evaluating registrations."""

from dataclasses import dataclass

import numpy as np

from .fields import ScalarVolume, check_same_grid


@dataclass
class DiceResult:
    value: float
    empty: bool = False

    def __float__(self):
        return self.value


def dice_score(seg_a: ScalarVolume, seg_b: ScalarVolume, label: int) -> DiceResult:
    """Dice overlap of ``label`` between two segmentations.

    When neither volume contains the label the score is 1.0 and the result
    is flagged ``empty``.
    """
    check_same_grid(seg_a, seg_b)
    a = seg_a.data == label
    b = seg_b.data == label
    na = int(np.count_nonzero(a))
    nb = int(np.count_nonzero(b))
    if na + nb == 0:
        return DiceResult(1.0, True)
    inter = int(np.count_nonzero(a & b))
    return DiceResult(2.0 * inter / (na + nb))


def dice(seg_a: ScalarVolume, seg_b: ScalarVolume, label: int = 1) -> float:
    return dice_score(seg_a, seg_b, label).value


def dice_multilabel(seg_a: ScalarVolume, seg_b: ScalarVolume):
    """Per-label Dice over all non-background labels, and their unweighted mean.

    Returns ``(scores, mean)``; ``mean`` is None when no foreground label exists.
    """
    check_same_grid(seg_a, seg_b)
    labels = np.union1d(np.unique(seg_a.data), np.unique(seg_b.data))
    labels = [int(k) for k in labels if k != 0]
    scores = {k: dice(seg_a, seg_b, k) for k in labels}
    mean = float(np.mean([scores[k] for k in labels])) if labels else None
    return scores, mean


def ssd_value(a: ScalarVolume, b: ScalarVolume) -> float:
    """Half the mean squared difference."""
    check_same_grid(a, b)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    return 0.5 * float(np.mean(diff * diff))

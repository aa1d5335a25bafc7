from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from shared.schemas import LabeledImageSet, Tensor

logger = logging.getLogger(__name__)


@dataclass
class Confusion:
    percent: Tensor          # (m, m) row percentages; NaN rows for classes absent from the test set
    counts: np.ndarray       # (m, m) raw counts
    accuracy: float          # percent correct overall
    missing: List[int] = field(default_factory=list)


def confusion_from_predictions(labels: np.ndarray, predictions: np.ndarray, n_classes: int = 10) -> Confusion:
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("confusion: empty test set")
    if labels.shape != predictions.shape:
        raise ValueError(f"{len(labels)} labels but {len(predictions)} predictions")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    totals = counts.sum(axis=1)
    missing = [int(c) for c in np.flatnonzero(totals == 0)]
    with np.errstate(invalid="ignore", divide="ignore"):
        percent = 100.0 * counts / totals[:, None]
    percent[totals == 0] = np.nan
    if missing:
        logger.warning("classes absent from the test set (rows left as NaN): %s", missing)
    accuracy = 100.0 * float(np.trace(counts)) / len(labels)
    return Confusion(percent, counts, accuracy, missing)


def confusion(net, testset: LabeledImageSet, workers: int = 1) -> Confusion:
    """Row-percentage confusion matrix of `net` on `testset`."""
    preds = net.predict_many(testset.images, workers=workers)
    return confusion_from_predictions(testset.labels, preds, net.config.n_classes)


def accuracy(net, testset: LabeledImageSet, workers: int = 1) -> float:
    return confusion(net, testset, workers).accuracy

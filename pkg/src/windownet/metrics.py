"""ROC-AUC per class and averaged over classes."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


@dataclass
class EvalResult:
    """Per-class AUCs (``None`` where undefined) and their mean."""

    per_class_auc: List[Optional[float]]
    n_pos: List[int]
    n_neg: List[int]
    class_names: List[str] = field(default_factory=list)

    @property
    def mean_auc(self) -> float:
        defined = [a for a in self.per_class_auc if a is not None]
        return float(np.mean(defined)) if defined else float("nan")

    @property
    def undefined_classes(self) -> List[int]:
        return [i for i, a in enumerate(self.per_class_auc) if a is None]

    def names(self) -> List[str]:
        if self.class_names:
            return list(self.class_names)
        return [f"class_{i}" for i in range(len(self.per_class_auc))]

    def to_csv(self) -> str:
        """CSV with columns ``class,auc,n_pos,n_neg`` and a trailing ``mean`` row.

        Undefined AUCs are written as an empty field.
        """
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "auc", "n_pos", "n_neg"])
        for name, auc, p, n in zip(self.names(), self.per_class_auc, self.n_pos, self.n_neg):
            writer.writerow([name, "" if auc is None else f"{auc:.6f}", p, n])
        writer.writerow(["mean", f"{self.mean_auc:.6f}", sum(self.n_pos), sum(self.n_neg)])
        return buf.getvalue()


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> Optional[float]:
    """Mann-Whitney AUC from average ranks; ties count one half.

    Returns ``None`` when the labels contain only one class.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length: {s.shape} vs {y.shape}")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s, method="average")
    # u counts (pos, neg) pairs with pos > neg, ties halved; kept in exact
    # half-integer arithmetic so it matches pairwise counting bit-for-bit
    twice_u = int(round(2.0 * ranks[pos].sum())) - n_pos * (n_pos + 1)
    return twice_u / (2.0 * n_pos * n_neg)


def evaluate(logits, labels, class_names: Optional[Sequence[str]] = None) -> EvalResult:
    """Column-wise AUC of the predicted probabilities against binary labels.

    Ranks are taken on the logits themselves: sigmoid is strictly increasing,
    so the AUC is the same, and large logits do not collapse into ties.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if z.shape != y.shape or z.ndim != 2:
        raise ValueError(f"logits {z.shape} and labels {y.shape} must be equal 2-D shapes")
    aucs, n_pos, n_neg = [], [], []
    for c in range(z.shape[1]):
        auc = roc_auc(z[:, c], y[:, c])
        p = int((y[:, c] == 1).sum())
        aucs.append(auc)
        n_pos.append(p)
        n_neg.append(int(y.shape[0] - p))
        if auc is None:
            name = class_names[c] if class_names else c
            logger.warning("AUC undefined for class %s (%d positives, %d negatives)", name, p, y.shape[0] - p)
    return EvalResult(aucs, n_pos, n_neg, list(class_names) if class_names else [])

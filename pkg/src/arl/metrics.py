"""Within-group verification metrics and fairness summaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ARLError, normalize_rows

DEFAULT_FPRS = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


class InsufficientPairs(ARLError, ValueError):
    pass


class InsufficientNegatives(ARLError, ValueError):
    pass


@dataclass
class PairScores:
    positives: np.ndarray
    negatives: np.ndarray
    group: str = ""

    def __post_init__(self):
        self.positives = np.sort(np.asarray(self.positives, dtype=np.float64))
        self.negatives = np.sort(np.asarray(self.negatives, dtype=np.float64))


def _require(scores: PairScores) -> None:
    if len(scores.positives) == 0 or len(scores.negatives) == 0:
        raise InsufficientPairs(
            f"group {scores.group!r}: {len(scores.positives)} positive / {len(scores.negatives)} negative pairs"
        )


def pair_scores(observations, identities, model=None, group: str = "") -> PairScores:
    """All same-identity (positive) and cross-identity (negative) cosines in a group.

    With a ``model`` the observations are embedded first; otherwise they are
    taken to be embeddings already.
    """
    x = model.raw(observations) if model is not None else np.asarray(observations, dtype=np.float64)
    f, _ = normalize_rows(x)
    ids = np.asarray(identities)
    iu, ju = np.triu_indices(len(ids), k=1)
    cos = np.clip(np.einsum("ij,ij->i", f[iu], f[ju]), -1.0, 1.0)
    same = ids[iu] == ids[ju]
    scores = PairScores(cos[same], cos[~same], group)
    _require(scores)
    return scores


def listed_pair_scores(observations, pairs, model=None, group: str = "") -> PairScores:
    """Cosines of an explicit ``(i, j, same)`` pair list."""
    x = model.raw(observations) if model is not None else np.asarray(observations, dtype=np.float64)
    f, _ = normalize_rows(x)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 3)
    cos = np.clip(np.einsum("ij,ij->i", f[pairs[:, 0]], f[pairs[:, 1]]), -1.0, 1.0)
    same = pairs[:, 2].astype(bool)
    scores = PairScores(cos[same], cos[~same], group)
    _require(scores)
    return scores


def tpr_at_fpr(scores: PairScores, fpr_target: float) -> float:
    """TPR at the smallest threshold whose false-positive rate is at most the target.

    A pair is accepted when its score is >= the threshold.
    """
    if not 0 < fpr_target <= 1:
        raise ValueError("fpr_target must lie in (0, 1]")
    _require(scores)
    neg, pos = scores.negatives, scores.positives
    if fpr_target < 1.0 / len(neg):
        raise InsufficientNegatives(f"{len(neg)} negatives cannot resolve FPR {fpr_target:g}")
    allowed = int(np.floor(fpr_target * len(neg) + 1e-9))
    if allowed >= len(neg):
        return 1.0
    # the (allowed+1)-th largest negative must be rejected, so accept only above it
    cut = neg[len(neg) - allowed - 1]
    return float(len(pos) - np.searchsorted(pos, cut, side="right")) / len(pos)


def roc_curve(scores: PairScores) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stepwise ROC from a sweep over every distinct score, (0,0) to (1,1)."""
    _require(scores)
    pos, neg = scores.positives, scores.negatives
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    tp = len(pos) - np.searchsorted(pos, thresholds, side="left")
    fp = len(neg) - np.searchsorted(neg, thresholds, side="left")
    fpr = np.concatenate([[0.0], fp / len(neg)])
    tpr = np.concatenate([[0.0], tp / len(pos)])
    return fpr, tpr, np.concatenate([[np.inf], thresholds])


def auc(fpr, tpr) -> float:
    fpr = np.asarray(fpr)
    tpr = np.asarray(tpr)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def histogram_medians(scores: PairScores) -> tuple[float, float, float]:
    _require(scores)
    p = float(np.median(scores.positives))
    n = float(np.median(scores.negatives))
    return p, n, p - n


def verification_accuracy(scores: PairScores) -> tuple[float, float]:
    """Best single-threshold accuracy ``(TP + TN) / (P + N)`` and its threshold."""
    _require(scores)
    pos, neg = scores.positives, scores.negatives
    thresholds = np.concatenate([np.unique(np.concatenate([pos, neg])), [np.inf]])
    tp = len(pos) - np.searchsorted(pos, thresholds, side="left")
    tn = np.searchsorted(neg, thresholds, side="left")
    correct = tp + tn
    best = int(np.argmax(correct))
    return float(correct[best]) / (len(pos) + len(neg)), float(thresholds[best])


def fairness_summary(accuracies, ddof: int = 1) -> tuple[float, float]:
    """Mean and standard deviation across groups.

    ``ddof=1`` (sample deviation) reproduces the published AVG/STD pairs,
    e.g. 87.36 / 3.05 for accuracies 85.35, 84.55, 91.25, 88.28.
    """
    acc = np.asarray(accuracies, dtype=np.float64)
    if len(acc) < 2:
        raise ValueError("need at least two groups")
    return float(acc.mean()), float(acc.std(ddof=ddof))


@dataclass
class GroupReport:
    group: str
    n_positive: int
    n_negative: int
    tpr: dict[float, float | None]
    roc_fpr: np.ndarray
    roc_tpr: np.ndarray
    auc: float
    pos_median: float
    neg_median: float
    median_diff: float
    accuracy: float
    threshold: float


@dataclass
class EvalReport:
    groups: dict[str, GroupReport]
    avg_accuracy: float | None
    std_accuracy: float | None
    warnings: list[str] = field(default_factory=list)

    def tpr(self, group: str, fpr: float) -> float | None:
        return self.groups[group].tpr.get(fpr)


def evaluate_group(scores: PairScores, fprs=DEFAULT_FPRS) -> GroupReport:
    tpr = {}
    for f in fprs:
        try:
            tpr[f] = tpr_at_fpr(scores, f)
        except InsufficientNegatives:
            tpr[f] = None
    fpr_pts, tpr_pts, _ = roc_curve(scores)
    p, n, diff = histogram_medians(scores)
    acc, thr = verification_accuracy(scores)
    return GroupReport(
        group=scores.group,
        n_positive=len(scores.positives),
        n_negative=len(scores.negatives),
        tpr=tpr,
        roc_fpr=fpr_pts,
        roc_tpr=tpr_pts,
        auc=auc(fpr_pts, tpr_pts),
        pos_median=p,
        neg_median=n,
        median_diff=diff,
        accuracy=acc,
        threshold=thr,
    )


def evaluate(model, test_set, fprs=DEFAULT_FPRS, accuracy_pairs=None) -> EvalReport:
    """Per-group report over a test set; groups without both pair kinds are skipped.

    ``accuracy_pairs`` maps a group tag to an ``(i, j, same)`` list indexing
    that group's images; when present, verification accuracy is measured on
    that list instead of on all pairs.
    """
    groups, notes = {}, []
    for tag in test_set.groups():
        sub = test_set.group(tag)
        try:
            scores = pair_scores(sub.observations, sub.identity, model, group=tag)
        except InsufficientPairs as exc:
            notes.append(f"group {tag} omitted: {exc}")
            continue
        report = evaluate_group(scores, fprs)
        if accuracy_pairs is not None and tag in accuracy_pairs:
            listed = listed_pair_scores(sub.observations, accuracy_pairs[tag], model, group=tag)
            report.accuracy, report.threshold = verification_accuracy(listed)
        groups[tag] = report
    avg = std = None
    if len(groups) >= 2:
        avg, std = fairness_summary([g.accuracy for g in groups.values()])
    return EvalReport(groups, avg, std, notes)

"""Batch construction and the unlabeled-data selection pipeline."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import ARLError, WeightBank, normalize_rows
from .pools import UnlabeledPool

FEMALE_BELOW = 0.3
MALE_ABOVE = 0.7


class PoolExhausted(ARLError, ValueError):
    pass


class QuotaExceedsPool(UserWarning):
    """A selection quota was larger than the group it selects from."""


@dataclass(frozen=True)
class Batch:
    labeled: np.ndarray
    unlabeled: np.ndarray


@dataclass
class SafePairSet:
    pairs: list[tuple[int, int, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    def index_pairs(self) -> set[tuple[int, int]]:
        return {(i, j) for i, j, _ in self.pairs}


def build_batch(labeled_pool, unlabeled_pool, hp, rng: np.random.Generator, replace: bool = False) -> Batch:
    """Draw one mixed batch, uniformly within each pool."""
    picks = []
    for pool, quota in ((labeled_pool, hp.labeled_per_batch), (unlabeled_pool, hp.unlabeled_per_batch)):
        n = 0 if pool is None else len(pool)
        if quota and n == 0:
            raise PoolExhausted("cannot draw from an empty pool")
        if not replace and quota > n:
            raise PoolExhausted(f"pool of {n} cannot supply {quota} samples without replacement")
        picks.append(rng.choice(n, size=quota, replace=replace) if quota else np.zeros(0, dtype=np.int64))
    return Batch(np.asarray(picks[0], dtype=np.int64), np.asarray(picks[1], dtype=np.int64))


def epoch_batches(n_labeled: int, n_unlabeled: int, labeled_per_batch: int, unlabeled_per_batch: int, rng):
    """Yield one epoch of batches, each pool element used at most once.

    The epoch ends when either pool runs short; a final smaller batch keeps the
    labeled:unlabeled ratio by flooring both parts.
    """
    if labeled_per_batch <= 0:
        raise ValueError("labeled_per_batch must be positive")
    perm_l = rng.permutation(n_labeled)
    perm_u = rng.permutation(n_unlabeled) if unlabeled_per_batch else np.zeros(0, dtype=np.int64)
    if unlabeled_per_batch:
        n_full = min(n_labeled // labeled_per_batch, n_unlabeled // unlabeled_per_batch)
    else:
        n_full = n_labeled // labeled_per_batch
    for b in range(n_full):
        yield Batch(
            perm_l[b * labeled_per_batch : (b + 1) * labeled_per_batch],
            perm_u[b * unlabeled_per_batch : (b + 1) * unlabeled_per_batch],
        )
    rest_l = n_labeled - n_full * labeled_per_batch
    if unlabeled_per_batch:
        rest_u = n_unlabeled - n_full * unlabeled_per_batch
        scale = min(rest_l / labeled_per_batch, rest_u / unlabeled_per_batch)
        take_l, take_u = math.floor(scale * labeled_per_batch), math.floor(scale * unlabeled_per_batch)
    else:
        take_l, take_u = rest_l, 0
    if take_l > 0:
        start_l, start_u = n_full * labeled_per_batch, n_full * unlabeled_per_batch
        yield Batch(perm_l[start_l : start_l + take_l], perm_u[start_u : start_u + take_u])


def k_set(bank: WeightBank, pseudo_id: int) -> np.ndarray:
    """Bank columns of unlabeled images whose ethnicity differs from ``pseudo_id``'s."""
    own = bank.column_of(pseudo_id)
    tag = bank.ethnicity[own - bank.n_labeled]
    return bank.n_labeled + np.flatnonzero(bank.ethnicity != tag)


def safe_pairs(features, t: float) -> SafePairSet:
    x = np.asarray(features, dtype=np.float64)
    if x.size == 0 or x.shape[0] < 2:
        return SafePairSet()
    f, _ = normalize_rows(x)
    c = f @ f.T
    ii, jj = np.nonzero(np.triu((c > 0.0) & (c < t), k=1))
    return SafePairSet([(int(i), int(j), float(c[i, j])) for i, j in zip(ii, jj)])


def labeled_probabilities(features, bank: WeightBank, s: float) -> np.ndarray:
    """Margin-free softmax over the N labeled classes, one row per feature."""
    z = s * np.clip(np.asarray(features) @ bank.labeled_weights, -1.0, 1.0)
    z -= z.max(axis=1, keepdims=True)
    ex = np.exp(z)
    return ex / ex.sum(axis=1, keepdims=True)


def filter_overlap(pool: UnlabeledPool, model, bank: WeightBank, threshold: float = 0.9, s: float = 64.0):
    """Drop unlabeled samples the baseline confidently assigns to a labeled class.

    Returns ``(kept_pool, removed_count)``.
    """
    if len(pool) == 0:
        return pool, 0
    feats, _ = model.embed(pool.observations)
    p_max = labeled_probabilities(feats, bank, s).max(axis=1)
    keep = np.flatnonzero(~(p_max > threshold))
    return pool.subset(keep), len(pool) - len(keep)


def _by_magnitude(pool: UnlabeledPool, idx: np.ndarray) -> np.ndarray:
    # descending magnitude, ties by ascending pseudo id
    order = np.lexsort((pool.pseudo_ids[idx], -pool.magnitude[idx]))
    return idx[order]


def _groups(pool: UnlabeledPool):
    for tag in sorted(set(pool.ethnicity.tolist())):
        yield tag, np.flatnonzero(pool.ethnicity == tag)


def select_by_magnitude(pool: UnlabeledPool, quota: int) -> UnlabeledPool:
    """Keep the ``quota`` largest-magnitude samples of every ethnicity group."""
    chosen = []
    for tag, idx in _groups(pool):
        if quota > len(idx):
            warnings.warn(QuotaExceedsPool(f"group {tag}: quota {quota} > {len(idx)} samples"), stacklevel=2)
        chosen.append(_by_magnitude(pool, idx)[:quota])
    return pool.subset(np.sort(np.concatenate(chosen))) if chosen else pool


def gender_category(score) -> np.ndarray:
    score = np.asarray(score)
    return np.where(score < FEMALE_BELOW, "female", np.where(score > MALE_ABOVE, "male", "unknown"))


def _gender_fill(pool: UnlabeledPool, idx: np.ndarray, quota: int) -> np.ndarray:
    cat = gender_category(pool.gender_score[idx])
    female = _by_magnitude(pool, idx[cat == "female"])
    unknown = _by_magnitude(pool, idx[cat == "unknown"])
    male = _by_magnitude(pool, idx[cat == "male"])
    half = math.ceil(quota / 2)
    n_f = min(half, len(female))
    n_u = min(half - n_f, len(unknown))
    n_m = min(quota - n_f - n_u, len(male))
    picked = [female[:n_f], unknown[:n_u], male[:n_m]]
    short = quota - n_f - n_u - n_m
    if short > 0:
        # males ran out: top up with what is left, unknown before female
        leftovers = np.concatenate([unknown[n_u:], female[n_f:]])
        picked.append(leftovers[:short])
    return np.concatenate(picked)


def gender_balanced_select(pool: UnlabeledPool, quota: int) -> UnlabeledPool:
    """Per ethnicity group, aim for ``quota/2`` female, padded from unknown, rest male.

    Gender comes from the masculinity score: below 0.3 female, above 0.7 male,
    otherwise unknown. Inside each category larger feature magnitudes win.
    """
    chosen = []
    for tag, idx in _groups(pool):
        if quota > len(idx):
            warnings.warn(QuotaExceedsPool(f"group {tag}: quota {quota} > {len(idx)} samples"), stacklevel=2)
            chosen.append(idx)
        else:
            chosen.append(_gender_fill(pool, idx, quota))
    return pool.subset(np.sort(np.concatenate(chosen))) if chosen else pool

"""Loss terms of the asymmetric rejection objective with analytic gradients.

Single-sample functions (``loss_labeled``, ``loss_unlabeled``, ``loss_uir``)
take a unit feature and return gradients with respect to that feature as an
ambient vector (``dL/df`` treating ``cos_j = f . W_j``) and with respect to
each participating bank column. ``total_loss`` works on raw, un-normalized
embeddings and chains through the row normalization itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import ARLError, Hyperparams, WeightBank, normalize_rows


class TargetNotActive(ARLError, ValueError):
    pass


class UnknownClass(ARLError, ValueError):
    pass


class EmptyBank(ARLError, ValueError):
    pass


class EmptyLabeledPortion(ARLError, ValueError):
    pass


@dataclass
class LossValue:
    value: float
    grad_feature: np.ndarray
    grad_weights: dict[int, np.ndarray] = field(default_factory=dict)
    n_pairs: int = 0


@dataclass
class TotalLoss:
    value: float
    labeled: float
    unlabeled: float
    penalty: float
    n_pairs: int
    grad_labeled: np.ndarray
    grad_unlabeled: np.ndarray
    grad_weights: np.ndarray
    active_labeled: np.ndarray
    active_unlabeled: np.ndarray


def margin_logits(f, bank: WeightBank, target: int, active, s: float, m: float) -> np.ndarray:
    """Logits over ``active`` columns, in the given order, with margin on ``target``."""
    active = np.asarray(active, dtype=np.int64)
    if target not in set(active.tolist()):
        raise TargetNotActive(f"target column {target} is not in the active set")
    c = np.clip(np.asarray(f, dtype=np.float64) @ bank.weights[:, active], -1.0, 1.0)
    logits = s * c
    pos = int(np.flatnonzero(active == target)[0])
    ct = c[pos]
    sin_t = np.sqrt(max((1.0 - ct) * (1.0 + ct), 0.0))
    logits[pos] = s * (ct * np.cos(m) - sin_t * np.sin(m))
    return logits


def labeled_mask(bank: WeightBank, n_rows: int, unlabeled_columns=None) -> np.ndarray:
    """Active set for labeled rows: all N classes plus the given unlabeled columns.

    ``unlabeled_columns=None`` activates the whole unlabeled bank.
    """
    mask = np.zeros((n_rows, bank.n_columns), dtype=bool)
    mask[:, : bank.n_labeled] = True
    if unlabeled_columns is None:
        mask[:, bank.n_labeled :] = True
    else:
        mask[:, np.asarray(unlabeled_columns, dtype=np.int64)] = True
    return mask


def unlabeled_mask(bank: WeightBank, own_columns, use_k: bool = True) -> np.ndarray:
    """Active set for unlabeled rows: N classes, own column, other-ethnicity columns."""
    own_columns = np.asarray(own_columns, dtype=np.int64)
    n = len(own_columns)
    mask = np.zeros((n, bank.n_columns), dtype=bool)
    mask[:, : bank.n_labeled] = True
    if use_k and n:
        own_tags = bank.ethnicity[own_columns - bank.n_labeled]
        mask[:, bank.n_labeled :] = own_tags[:, None] != bank.ethnicity[None, :]
    mask[np.arange(n), own_columns] = True
    return mask


def _single(f, bank, target, mask, hp):
    f = np.asarray(f, dtype=np.float64)
    cos = (f @ bank.weights)[None, :]
    losses, g = kernels.margin_ce(cos, np.array([target]), mask[None, :], hp.s, hp.m)
    g = g[0]
    cols = np.flatnonzero(mask)
    return LossValue(
        value=float(losses[0]),
        grad_feature=bank.weights @ g,
        grad_weights={int(j): g[j] * f for j in cols},
    )


def loss_labeled(f, class_id: int, bank: WeightBank, hp: Hyperparams, unlabeled_columns=None) -> LossValue:
    if not 0 <= class_id < bank.n_labeled:
        raise UnknownClass(f"class {class_id} outside [0, {bank.n_labeled})")
    mask = labeled_mask(bank, 1, unlabeled_columns)[0]
    return _single(f, bank, class_id, mask, hp)


def loss_unlabeled(f, pseudo_id: int, bank: WeightBank, hp: Hyperparams, use_k: bool = True) -> LossValue:
    own = bank.column_of(pseudo_id)
    mask = unlabeled_mask(bank, [own], use_k)[0]
    return _single(f, bank, own, mask, hp)


def loss_uir(f, bank: WeightBank, hp: Hyperparams) -> LossValue:
    """Sum of ``-log p_i`` over the N labeled classes (no margin, scale ``s``)."""
    if bank.n_labeled < 1:
        raise EmptyBank("UIR needs at least one labeled class")
    f = np.asarray(f, dtype=np.float64)
    w = bank.labeled_weights
    losses, g = kernels.uir((f @ w)[None, :], hp.s)
    g = g[0]
    return LossValue(
        value=float(losses[0]),
        grad_feature=w @ g,
        grad_weights={j: g[j] * f for j in range(bank.n_labeled)},
    )


def cosine_penalty(features, t: float) -> LossValue:
    """Safe-pair L2 penalty; gradient is with respect to the rows as given.

    Rows need not be unit length: they are normalized internally and the
    gradient flows back through that normalization.
    """
    x = np.asarray(features, dtype=np.float64)
    x = np.atleast_2d(x) if x.size else np.zeros((0, 1))
    value, grad, n_t = kernels.pair_penalty(x, t)
    return LossValue(value=value, grad_feature=grad, n_pairs=n_t)


def _to_raw(grad_f, f, norms):
    """Chain ``dL/df`` through ``f = u / |u|`` row-wise."""
    radial = np.sum(grad_f * f, axis=1)
    return (grad_f - radial[:, None] * f) / norms[:, None]


def total_loss(
    labeled_emb,
    class_ids,
    unlabeled_emb,
    pseudo_ids,
    bank: WeightBank,
    hp: Hyperparams,
    *,
    use_k: bool = True,
    unlabeled_loss: str = "arl",
    labeled_bank: str = "full",
) -> TotalLoss:
    """Combined objective ``L_L + lambda_U * L_U + lambda_C * L_C`` for one batch.

    ``labeled_emb`` / ``unlabeled_emb`` are raw embeddings (rows, before
    normalization). ``labeled_bank`` picks which unlabeled columns labeled rows
    classify against: ``"full"`` (whole bank), ``"batch"`` (only the columns of
    this batch's unlabeled rows) or ``"none"``. ``unlabeled_loss`` is ``"arl"``
    for the N+K+1 classification or ``"uir"`` for the entropy baseline.
    """
    labeled_emb = np.asarray(labeled_emb, dtype=np.float64)
    unlabeled_emb = np.asarray(unlabeled_emb, dtype=np.float64).reshape(-1, bank.dim)
    class_ids = np.asarray(class_ids, dtype=np.int64)
    if len(class_ids) == 0:
        raise EmptyLabeledPortion("batch has no labeled samples")
    if class_ids.min() < 0 or class_ids.max() >= bank.n_labeled:
        raise UnknownClass("labeled class id out of range")

    W = bank.weights
    grad_W = np.zeros_like(W)

    f_lab, n_lab = normalize_rows(labeled_emb)
    needs_cols = len(pseudo_ids) and (unlabeled_loss == "arl" or labeled_bank == "batch")
    own_cols = bank.columns_of(pseudo_ids) if needs_cols else np.zeros(0, dtype=np.int64)
    if labeled_bank == "full":
        mask_l = labeled_mask(bank, len(class_ids))
    elif labeled_bank == "batch":
        mask_l = labeled_mask(bank, len(class_ids), own_cols)
    elif labeled_bank == "none":
        mask_l = labeled_mask(bank, len(class_ids), [])
    else:
        raise ValueError(f"unknown labeled_bank {labeled_bank!r}")
    losses_l, g_l = kernels.margin_ce(f_lab @ W, class_ids, mask_l, hp.s, hp.m)
    g_l /= len(class_ids)
    loss_l = float(losses_l.mean())
    grad_W += f_lab.T @ g_l
    grad_lab = _to_raw(g_l @ W.T, f_lab, n_lab)

    loss_u = loss_c = 0.0
    n_pairs = 0
    grad_unl = np.zeros_like(unlabeled_emb)
    active_u = np.zeros(0, dtype=np.int64)
    if len(unlabeled_emb):
        f_unl, n_unl = normalize_rows(unlabeled_emb)
        if unlabeled_loss == "arl":
            mask_u = unlabeled_mask(bank, own_cols, use_k)
            losses_u, g_u = kernels.margin_ce(f_unl @ W, own_cols, mask_u, hp.s, hp.m)
            g_u *= hp.lambda_U / len(own_cols)
            grad_W += f_unl.T @ g_u
            active_u = mask_u.sum(axis=1)
        elif unlabeled_loss == "uir":
            if bank.n_labeled < 1:
                raise EmptyBank("UIR needs at least one labeled class")
            Wl = bank.labeled_weights
            losses_u, g_small = kernels.uir(f_unl @ Wl, hp.s)
            g_u = np.zeros((len(f_unl), bank.n_columns))
            g_u[:, : bank.n_labeled] = g_small * (hp.lambda_U / len(f_unl))
            grad_W += f_unl.T @ g_u
            active_u = np.full(len(f_unl), bank.n_labeled)
        else:
            raise ValueError(f"unknown unlabeled_loss {unlabeled_loss!r}")
        loss_u = float(losses_u.mean())
        grad_unl = _to_raw(g_u @ W.T, f_unl, n_unl)

        loss_c, g_c, n_pairs = kernels.pair_penalty(unlabeled_emb, hp.t)
        grad_unl += hp.lambda_C * g_c

    value = loss_l + hp.lambda_U * loss_u + hp.lambda_C * loss_c
    return TotalLoss(
        value=value,
        labeled=loss_l,
        unlabeled=loss_u,
        penalty=loss_c,
        n_pairs=n_pairs,
        grad_labeled=grad_lab,
        grad_unlabeled=grad_unl,
        grad_weights=grad_W,
        active_labeled=mask_l.sum(axis=1),
        active_unlabeled=active_u,
    )

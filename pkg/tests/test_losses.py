import math

import numpy as np
import pytest

from arl.core import Hyperparams, MissingWeightColumn, WeightBank
from arl.losses import (
    EmptyBank,
    EmptyLabeledPortion,
    TargetNotActive,
    UnknownClass,
    cosine_penalty,
    labeled_mask,
    loss_labeled,
    loss_uir,
    loss_unlabeled,
    margin_logits,
    total_loss,
    unlabeled_mask,
)
from helpers import random_bank, unit_columns, unit_rows
from oracles import central_difference, margin_softmax_loss, pair_penalty, relative_error, uir_loss

HP = Hyperparams()


def test_margin_logits_hand_case():
    bank = WeightBank(np.eye(2), 2)
    f = np.array([math.cos(0.3), math.sin(0.3)])
    z = margin_logits(f, bank, 0, [0, 1], s=2.0, m=0.5)
    assert z[0] == pytest.approx(2.0 * math.cos(0.8))
    assert z[1] == pytest.approx(2.0 * math.sin(0.3))
    with pytest.raises(TargetNotActive):
        margin_logits(f, bank, 0, [1], 2.0, 0.5)


def test_labeled_equals_arcface_when_bank_is_empty(rng):
    bank = WeightBank(unit_columns(rng, 5, 4), 4)
    f = unit_rows(rng, 1, 5)[0]
    got = loss_labeled(f, 2, bank, HP).value
    assert got == pytest.approx(margin_softmax_loss(f, bank.weights, 2, range(4), 64.0, 0.5), rel=1e-10)


def test_labeled_loss_grows_with_unlabeled_columns(rng):
    # extra negatives can only add mass to the denominator
    bank = random_bank(rng, 6, 3, ["B", "C", "B"])
    f = unit_rows(rng, 1, 6)[0]
    hp = Hyperparams(s=4.0)
    none = loss_labeled(f, 0, bank, hp, unlabeled_columns=[]).value
    full = loss_labeled(f, 0, bank, hp).value
    assert full > none


def test_unknown_class_and_missing_column(rng):
    bank = random_bank(rng, 4, 3, ["B"])
    f = unit_rows(rng, 1, 4)[0]
    with pytest.raises(UnknownClass):
        loss_labeled(f, 3, bank, HP)
    with pytest.raises(MissingWeightColumn):
        loss_unlabeled(f, 999, bank, HP)


def test_unlabeled_active_set_is_n_plus_k_plus_one(rng):
    tags = ["B", "B", "C", "C", "C", "D"]
    bank = random_bank(rng, 5, 4, tags)
    f = unit_rows(rng, 1, 5)[0]
    res = loss_unlabeled(f, 100, bank, HP)
    k = sum(t != "B" for t in tags)
    assert len(res.grad_weights) == 4 + k + 1
    assert 5 not in res.grad_weights  # the other B column
    no_k = loss_unlabeled(f, 100, bank, HP, use_k=False)
    assert sorted(no_k.grad_weights) == [0, 1, 2, 3, 4]


def test_unlabeled_matches_oracle(rng):
    bank = random_bank(rng, 6, 4, ["B", "C", "B", "C"])
    f = unit_rows(rng, 1, 6)[0]
    res = loss_unlabeled(f, 101, bank, HP)
    own = bank.column_of(101)
    active = sorted(res.grad_weights)
    assert res.value == pytest.approx(margin_softmax_loss(f, bank.weights, own, active, 64.0, 0.5), rel=1e-10)


def test_fresh_registration_gives_near_zero_loss(rng):
    bank = random_bank(rng, 6, 4, [])
    f = unit_rows(rng, 1, 6)[0]
    bank.append(f[:, None], [7], ["B"])
    res = loss_unlabeled(f, 7, bank, HP)
    assert 0 <= res.value < 1e-6
    assert np.all(np.isfinite(res.grad_feature))


def test_uir_examples(rng):
    bank = WeightBank(unit_columns(rng, 3, 1), 1)
    assert loss_uir(unit_rows(rng, 1, 3)[0], bank, HP).value == pytest.approx(0.0, abs=1e-12)
    # orthogonal unit columns and a feature orthogonal to all: uniform softmax
    bank = WeightBank(np.eye(5)[:, :4], 4)
    f = np.eye(5)[4]
    assert loss_uir(f, bank, HP).value == pytest.approx(4 * math.log(4))
    with pytest.raises(EmptyBank):
        loss_uir(f, WeightBank(np.zeros((5, 0)), 0), HP)


def test_uir_matches_oracle(rng):
    bank = random_bank(rng, 6, 7, ["B"])
    f = unit_rows(rng, 1, 6)[0]
    ref = uir_loss(f, bank.labeled_weights, 64.0)
    assert loss_uir(f, bank, HP).value == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("which", ["labeled", "unlabeled", "uir"])
def test_single_sample_gradients(which, rng):
    for _ in range(5):
        bank = random_bank(rng, 5, 4, ["B", "C", "B"])
        f = unit_rows(rng, 1, 5)[0]
        hp = Hyperparams(s=8.0)

        def value(ff, W=None):
            b = bank if W is None else WeightBank(W, bank.n_labeled, bank.pseudo_ids, bank.ethnicity)
            if which == "labeled":
                return loss_labeled(ff, 1, b, hp).value
            if which == "unlabeled":
                return loss_unlabeled(ff, 101, b, hp).value
            return loss_uir(ff, b, hp).value

        if which == "labeled":
            res = loss_labeled(f, 1, bank, hp)
        elif which == "unlabeled":
            res = loss_unlabeled(f, 101, bank, hp)
        else:
            res = loss_uir(f, bank, hp)
        assert relative_error(res.grad_feature, central_difference(value, f)) < 1e-6
        fd_w = central_difference(lambda W: value(f, W), bank.weights)
        analytic = np.zeros_like(bank.weights)
        for j, g in res.grad_weights.items():
            analytic[:, j] = g
        assert relative_error(analytic, fd_w) < 1e-6


def test_penalty_examples():
    assert cosine_penalty(np.zeros((0, 3)), 0.3).value == 0.0
    assert cosine_penalty(np.eye(3)[:1], 0.3).n_pairs == 0
    # cos 0.2 counts, cos 0.5 and -0.2 do not
    a = np.array([1.0, 0.0])
    b = np.array([0.2, math.sqrt(1 - 0.04)])
    res = cosine_penalty(np.stack([a, b]), 0.3)
    assert res.n_pairs == 1 and res.value == pytest.approx(0.04)
    c = np.array([0.5, math.sqrt(0.75)])
    assert cosine_penalty(np.stack([a, c]), 0.3).n_pairs == 0
    assert cosine_penalty(np.stack([a, -b]), 0.3).n_pairs == 0
    # exactly orthogonal is outside the open interval
    assert cosine_penalty(np.eye(2), 0.3).n_pairs == 0


def test_penalty_matches_oracle_and_gradient(rng):
    for n in (2, 5, 17, 32):
        x = rng.standard_normal((n, 6)) * rng.uniform(0.3, 2.0, size=(n, 1))
        res = cosine_penalty(x, 0.3)
        ref, ref_n = pair_penalty(x, 0.3)
        assert res.n_pairs == ref_n
        assert res.value == pytest.approx(ref, rel=1e-12, abs=1e-300)
        fd = central_difference(lambda y: cosine_penalty(y, 0.3).value, x)
        assert relative_error(res.grad_feature, fd) < 1e-6


def _batch(rng, d=6, n_lab=4, tags=("B", "C", "B", "C", "B"), bl=5, bu=3):
    bank = random_bank(rng, d, n_lab, list(tags))
    lab = rng.standard_normal((bl, d))
    cls = rng.integers(0, n_lab, size=bl)
    unl = rng.standard_normal((bu, d))
    pseudo = 100 + rng.choice(len(tags), size=bu, replace=False)
    return bank, lab, cls, unl, pseudo


@pytest.mark.parametrize("kwargs", [{}, {"use_k": False}, {"labeled_bank": "batch"}, {"unlabeled_loss": "uir"}])
def test_total_loss_gradients(kwargs, rng):
    hp = Hyperparams(s=6.0, t=0.6)
    for _ in range(3):
        bank, lab, cls, unl, pseudo = _batch(rng)
        res = total_loss(lab, cls, unl, pseudo, bank, hp, **kwargs)

        def value(l=lab, u=unl, W=bank.weights):
            b = WeightBank(W, bank.n_labeled, bank.pseudo_ids, bank.ethnicity)
            return total_loss(l, cls, u, pseudo, b, hp, **kwargs).value

        assert relative_error(res.grad_labeled, central_difference(lambda l: value(l=l), lab)) < 1e-6
        assert relative_error(res.grad_unlabeled, central_difference(lambda u: value(u=u), unl)) < 1e-6
        assert relative_error(res.grad_weights, central_difference(lambda W: value(W=W), bank.weights)) < 1e-6


def test_total_loss_components_and_weights(rng):
    bank, lab, cls, unl, pseudo = _batch(rng)
    res = total_loss(lab, cls, unl, pseudo, bank, HP)
    assert res.value == pytest.approx(res.labeled + 3.0 * res.unlabeled + 10.0 * res.penalty)
    f_lab = lab / np.linalg.norm(lab, axis=1, keepdims=True)
    expected = np.mean([loss_labeled(f, c, bank, HP).value for f, c in zip(f_lab, cls)])
    assert res.labeled == pytest.approx(expected, rel=1e-12)
    assert np.all(res.active_labeled == bank.n_columns)


def test_total_loss_empty_labeled(rng):
    bank, _, _, unl, pseudo = _batch(rng)
    with pytest.raises(EmptyLabeledPortion):
        total_loss(np.zeros((0, 6)), [], unl, pseudo, bank, HP)


def test_masks(rng):
    bank = random_bank(rng, 4, 2, ["B", "C", "B"])
    m = labeled_mask(bank, 2, [3])
    assert m.sum(axis=1).tolist() == [3, 3]
    u = unlabeled_mask(bank, [2, 3], use_k=True)
    # column 2 (B): N + C column + own; column 3 (C): N + two B columns + own
    assert u.sum(axis=1).tolist() == [4, 5]

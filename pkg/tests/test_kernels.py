"""Both kernel backends agree with each other and with the direct definitions."""

import numpy as np
import pytest

from arl import kernels
from helpers import unit_columns, unit_rows
from oracles import margin_softmax_loss, pair_penalty, uir_loss

numba_only = pytest.mark.skipif(kernels.margin_ce_numba is None, reason="numba not installed")


def _margin_case(rng, B=7, C=11, d=6):
    F = unit_rows(rng, B, d)
    W = unit_columns(rng, d, C)
    targets = rng.integers(0, C, size=B)
    mask = rng.random((B, C)) < 0.7
    mask[np.arange(B), targets] = True
    return F, W, targets, mask


def test_backend_flag_is_consistent():
    assert kernels.BACKEND in {"numba", "numpy"}
    assert kernels.USE_NUMBA == (kernels.BACKEND == "numba")


@numba_only
@pytest.mark.parametrize("seed", range(5))
def test_margin_backends_agree(seed):
    rng = np.random.default_rng(seed)
    F, W, targets, mask = _margin_case(rng)
    for s, m in ((64.0, 0.5), (1.0, 0.0), (30.0, 1.2)):
        la, ga = kernels.margin_ce_numpy(F @ W, targets, mask, s, m)
        lb, gb = kernels.margin_ce_numba(F @ W, targets, mask, s, m)
        np.testing.assert_allclose(la, lb, rtol=1e-12, atol=1e-300)
        np.testing.assert_allclose(ga, gb, rtol=1e-10, atol=1e-12)


@numba_only
@pytest.mark.parametrize("seed", range(3))
def test_uir_and_penalty_backends_agree(seed):
    rng = np.random.default_rng(seed)
    cos = unit_rows(rng, 5, 4) @ unit_columns(rng, 4, 9)
    la, ga = kernels.uir_numpy(cos, 64.0)
    lb, gb = kernels.uir_numba(cos, 64.0)
    np.testing.assert_allclose(la, lb, rtol=1e-12)
    np.testing.assert_allclose(ga, gb, rtol=1e-10, atol=1e-9)

    x = rng.standard_normal((20, 5)) * rng.uniform(0.5, 3.0, size=(20, 1))
    va, gxa, na = kernels.pair_penalty_numpy(x, 0.3)
    vb, gxb, nb = kernels.pair_penalty_numba(x, 0.3)
    assert na == nb
    assert va == pytest.approx(vb, rel=1e-12)
    np.testing.assert_allclose(gxa, gxb, rtol=1e-9, atol=1e-13)


@pytest.mark.parametrize("impl", ["numpy", "numba"])
def test_margin_matches_direct_definition(impl, rng):
    fn = getattr(kernels, f"margin_ce_{impl}")
    if fn is None:
        pytest.skip("numba not installed")
    F, W, targets, mask = _margin_case(rng)
    losses, _ = fn(F @ W, targets, mask, 64.0, 0.5)
    for b in range(len(F)):
        ref = margin_softmax_loss(F[b], W, targets[b], np.flatnonzero(mask[b]), 64.0, 0.5)
        assert losses[b] == pytest.approx(ref, rel=1e-10, abs=1e-300)


@pytest.mark.parametrize("impl", ["numpy", "numba"])
def test_uir_and_penalty_match_direct_definition(impl, rng):
    uir = getattr(kernels, f"uir_{impl}")
    pen = getattr(kernels, f"pair_penalty_{impl}")
    if uir is None:
        pytest.skip("numba not installed")
    F, W = unit_rows(rng, 3, 5), unit_columns(rng, 5, 6)
    losses, _ = uir(F @ W, 64.0)
    for b in range(3):
        assert losses[b] == pytest.approx(uir_loss(F[b], W, 64.0), rel=1e-10)
    x = rng.standard_normal((12, 4))
    value, _, n_t = pen(x, 0.3)
    ref, ref_n = pair_penalty(x, 0.3)
    assert n_t == ref_n
    assert value == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("impl", ["numpy", "numba"])
def test_tiny_loss_keeps_relative_precision(impl):
    fn = getattr(kernels, f"margin_ce_{impl}")
    if fn is None:
        pytest.skip("numba not installed")
    # target far ahead of every other logit: loss ~ exp(-60), not rounded to 0
    cos = np.array([[0.999, 0.0, -0.2]])
    losses, _ = fn(cos, np.array([0]), np.ones((1, 3), bool), 64.0, 0.0)
    expected = np.log1p(np.exp(-64 * 0.999) + np.exp(-64 * 1.199))
    assert losses[0] > 0
    assert losses[0] == pytest.approx(expected, rel=1e-12, abs=0)


@pytest.mark.parametrize("impl", ["numpy", "numba"])
def test_tiny_loss_keeps_gradient_precision(impl):
    fn = getattr(kernels, f"margin_ce_{impl}")
    if fn is None:
        pytest.skip("numba not installed")
    # the target gradient is -s * (1 - p_t); forming 1 - p_t directly would give 0
    cos = np.array([[0.999, 0.0, -0.2]])
    _, g = fn(cos, np.array([0]), np.ones((1, 3), bool), 64.0, 0.0)
    others = np.exp(-64 * 0.999) + np.exp(-64 * 1.199)
    assert g[0, 0] == pytest.approx(-64 * others / (1 + others), rel=1e-12, abs=0)
    assert g[0, 1] == pytest.approx(64 * np.exp(-64 * 0.999) / (1 + others), rel=1e-12, abs=0)


def test_masked_columns_get_no_gradient(rng):
    F, W, targets, mask = _margin_case(rng)
    _, g = kernels.margin_ce(F @ W, targets, mask, 64.0, 0.5)
    assert np.all(g[~mask] == 0.0)


def test_sin_floor_keeps_gradient_finite():
    # feature equal to its own column: theta = 0, sin = 0
    cos = np.array([[1.0, 0.1]])
    _, g = kernels.margin_ce(cos, np.array([0]), np.ones((1, 2), bool), 64.0, 0.5)
    assert np.all(np.isfinite(g))

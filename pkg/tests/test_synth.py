import numpy as np
import pytest

from arl.metrics import pair_scores
from arl.synth import (
    GroupSpec,
    InvalidSpec,
    PopulationSpec,
    difficult_pairs,
    generate_population,
    plant_overlap,
    standard_spec,
)
from helpers import small_spec


def _gen(spec=None, seed=0):
    return generate_population(spec or small_spec(), np.random.default_rng(seed))


def test_counts_follow_spec():
    spec = small_spec()
    pop = _gen(spec)
    assert len(pop.labeled) == sum(g.labeled_identities * g.images_per_identity for g in spec.groups)
    assert len(pop.unlabeled) == sum(g.unlabeled_identities * g.unlabeled_images_per_identity for g in spec.groups)
    assert len(pop.test) == sum(g.test_identities * g.test_images_per_identity for g in spec.groups)
    assert pop.labeled.class_ids.max() + 1 == sum(g.labeled_identities for g in spec.groups)
    assert np.all(np.isnan(pop.unlabeled.magnitude)) and not pop.unlabeled.planted.any()


def test_identity_sets_are_disjoint():
    pop = _gen()
    lab = set(pop.class_identity.tolist())
    unl = set(pop.unlabeled.truth_identity.tolist())
    test = set(pop.test.identity.tolist())
    assert not (lab & unl) and not (lab & test) and not (unl & test)


def test_deterministic_and_seed_sensitive():
    a, b, c = _gen(seed=3), _gen(seed=3), _gen(seed=4)
    for x, y in ((a.labeled, b.labeled), (a.unlabeled, b.unlabeled), (a.test, b.test)):
        for k, v in x.arrays().items():
            np.testing.assert_array_equal(v, y.arrays()[k])
    assert not np.array_equal(a.labeled.observations, c.labeled.observations)


def test_noiseless_limit_is_trivially_separable():
    spec = small_spec()
    spec.noise = 1e-9
    pop = _gen(spec)
    for tag in ("A", "B"):
        g = pop.test.group(tag)
        s = pair_scores(g.observations, g.identity)
        assert s.positives.min() > s.negatives.max()


def test_orthogonal_groups_have_near_zero_cross_cosine():
    spec = PopulationSpec(
        [GroupSpec("A", 40, subspace_dim=12), GroupSpec("B", 40, subspace_dim=12)], observation_dim=48, noise=0.05
    )
    pop = _gen(spec)
    a = pop.labeled.observations[pop.labeled.ethnicity == "A"]
    b = pop.labeled.observations[pop.labeled.ethnicity == "B"]
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    assert abs((a @ b.T).mean()) < 0.1


def test_positive_scores_dominate_negative():
    pop = _gen()
    for tag in ("A", "B", "C"):
        g = pop.test.group(tag)
        s = pair_scores(g.observations, g.identity)
        assert np.median(s.positives) > np.quantile(s.negatives, 0.95)


def test_tilted_bases_are_orthonormal_and_overlap():
    pop = _gen()
    for tag, basis in pop.bases.items():
        np.testing.assert_allclose(basis.T @ basis, np.eye(basis.shape[1]), atol=1e-12)
    cross = np.linalg.svd(pop.bases["A"].T @ pop.bases["B"], compute_uv=False)
    assert 0.1 < cross.max() < 0.9
    assert np.abs(pop.bases["B"].T @ pop.bases["C"]).max() < 0.9


@pytest.mark.parametrize(
    "change",
    [
        {"noise": 0.0},
        {"ambient_noise": 1.5},
        {"observation_dim": 10},
        {"groups": []},
    ],
)
def test_invalid_spec_raises(change):
    spec = small_spec()
    for k, v in change.items():
        setattr(spec, k, v)
    with pytest.raises(InvalidSpec):
        _gen(spec)


@pytest.mark.parametrize(
    "group",
    [
        {"tag": "A", "labeled_identities": 0, "test_identities": 0},
        {"tag": "Z", "labeled_identities": -1},
        {"tag": "Z", "labeled_identities": 2, "overlap": 1.5},
        {"tag": "Z", "labeled_identities": 2, "images_per_identity": 0},
    ],
)
def test_invalid_group_raises(group):
    spec = small_spec()
    spec.groups[0] = GroupSpec(**group)
    with pytest.raises(InvalidSpec):
        spec.validate()


def test_spec_round_trip():
    spec = standard_spec()
    spec.validate()
    assert PopulationSpec.from_dict(spec.to_dict()) == spec


def test_difficult_pairs_balanced_and_hardest():
    rng = np.random.default_rng(0)
    ids = np.repeat(np.arange(6), 3)
    means = rng.standard_normal((6, 5))[ids]
    rows = difficult_pairs(ids, means)
    same = rows[:, 2] == 1
    assert same.sum() == (~same).sum() == 6 * 3
    assert np.all(ids[rows[same, 0]] == ids[rows[same, 1]])
    m = means / np.linalg.norm(means, axis=1, keepdims=True)

    def sim(r):
        return np.einsum("ij,ij->i", m[r[:, 0]], m[r[:, 1]])

    iu, ju = np.triu_indices(len(ids), k=1)
    all_neg = np.stack([iu, ju], axis=1)[ids[iu] != ids[ju]]
    chosen = sim(rows[~same])
    assert chosen.min() >= np.sort(sim(all_neg))[-len(chosen)] - 1e-12


def test_plant_overlap():
    pop = _gen()
    rng = np.random.default_rng(1)
    assert plant_overlap(pop.labeled, pop.unlabeled, 0, rng) is pop.unlabeled
    out = plant_overlap(pop.labeled, pop.unlabeled, 10, rng)
    assert len(out) == len(pop.unlabeled) + 10
    planted = out.subset(np.flatnonzero(out.planted))
    assert len(planted) == 10
    assert len(np.unique(out.pseudo_ids)) == len(out)
    # hidden truth names the labeled class and is distinct from the pseudo id space
    cls = -planted.truth_identity - 1
    assert len(set(cls.tolist())) == 10 and np.all(cls < pop.labeled.class_ids.max() + 1)
    assert not set(planted.truth_identity.tolist()) & set(planted.pseudo_ids.tolist())
    for c, e in zip(cls, planted.ethnicity):
        assert pop.labeled.ethnicity[pop.labeled.class_ids == c][0] == e
    with pytest.raises(InvalidSpec):
        plant_overlap(pop.labeled, pop.unlabeled, 10_000, rng)

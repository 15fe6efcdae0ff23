"""Synthetic identity populations standing in for face datasets.

Every ethnic group owns a linear subspace of observation space. Identity
means are random unit directions inside the group subspace and each image is
``mean + noise * z`` (normalization happens later, in the model), where the
standard normal ``z`` is spread over all of observation space or confined to
the group subspace according to ``ambient_noise``.
Subspaces of non-dominant groups are tilted slightly toward the dominant
group's subspace so the groups are not perfectly separable.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import ARLError
from .pools import LabeledPool, TestSet, UnlabeledPool


class InvalidSpec(ARLError, ValueError):
    pass


@dataclass
class GroupSpec:
    tag: str
    labeled_identities: int
    unlabeled_identities: int = 0
    test_identities: int = 40
    images_per_identity: int = 8
    unlabeled_images_per_identity: int = 2
    test_images_per_identity: int = 4
    subspace_dim: int = 16
    # tilt of the group subspace toward the dominant group's, in units of pi/2
    overlap: float = 0.0
    # fraction of identities that are male
    gender_mix: float = 0.5


@dataclass
class PopulationSpec:
    groups: list[GroupSpec]
    observation_dim: int = 64
    noise: float = 0.1
    # share of the noise variance spread isotropically over all of observation
    # space; the rest stays inside the identity's group subspace
    ambient_noise: float = 1.0

    def __post_init__(self):
        self.groups = [g if isinstance(g, GroupSpec) else GroupSpec(**g) for g in self.groups]

    def validate(self) -> None:
        if not self.groups:
            raise InvalidSpec("at least one group is required")
        tags = [g.tag for g in self.groups]
        if len(set(tags)) != len(tags):
            raise InvalidSpec("group tags must be unique")
        if not self.noise > 0:
            raise InvalidSpec("intra-class noise must be positive")
        if not 0 <= self.ambient_noise <= 1:
            raise InvalidSpec("ambient_noise must lie in [0, 1]")
        if sum(g.subspace_dim for g in self.groups) > self.observation_dim:
            raise InvalidSpec("group subspaces do not fit in observation space")
        for g in self.groups:
            if g.labeled_identities + g.unlabeled_identities + g.test_identities < 1:
                raise InvalidSpec(f"group {g.tag} has no identities")
            if min(g.labeled_identities, g.unlabeled_identities, g.test_identities) < 0:
                raise InvalidSpec(f"group {g.tag} has a negative identity count")
            if g.subspace_dim < 1 or not 0 <= g.overlap <= 1 or not 0 <= g.gender_mix <= 1:
                raise InvalidSpec(f"group {g.tag} has an out-of-range parameter")
            if min(g.images_per_identity, g.unlabeled_images_per_identity, g.test_images_per_identity) < 1:
                raise InvalidSpec(f"group {g.tag} needs at least one image per identity")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> PopulationSpec:
        return cls(**d)


def standard_spec() -> PopulationSpec:
    """Dominant labeled group A and two under-represented groups B, C.

    B and C have few labeled identities and a large unlabeled-only pool. The
    group subspaces are wide and the noise small so cosines between different
    identities concentrate near zero: at scale s = 64 a genuine unlabeled
    identity then rarely finds a labeled column above the overlap threshold.
    """
    return PopulationSpec(
        groups=[
            GroupSpec("A", labeled_identities=1000, images_per_identity=3, subspace_dim=384),
            GroupSpec(
                "B", labeled_identities=20, unlabeled_identities=300, images_per_identity=3,
                subspace_dim=320, overlap=0.2,
            ),
            GroupSpec(
                "C", labeled_identities=20, unlabeled_identities=300, images_per_identity=3,
                subspace_dim=320, overlap=0.2,
            ),
        ],
        observation_dim=1024,
        noise=0.08,
    )


@dataclass
class Population:
    spec: PopulationSpec
    labeled: LabeledPool
    unlabeled: UnlabeledPool
    test: TestSet
    # hidden ground truth
    bases: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    class_identity: np.ndarray = field(repr=False, default=None)
    # per group: rows (i, j, same) indexing test.group(tag), for accuracy
    accuracy_pairs: dict[str, np.ndarray] = field(repr=False, default_factory=dict)


def difficult_pairs(identity, means) -> np.ndarray:
    """Balanced verification list: every positive pair plus as many negatives.

    Negatives are the cross-identity image pairs whose true identity means are
    most similar (ties by index), so the list is fixed at generation time and
    does not depend on any model. Rows are ``(i, j, same)``.
    """
    identity = np.asarray(identity)
    iu, ju = np.triu_indices(len(identity), k=1)
    same = identity[iu] == identity[ju]
    m = np.asarray(means, dtype=np.float64)
    m = m / np.linalg.norm(m, axis=1, keepdims=True)
    sim = np.einsum("ij,ij->i", m[iu], m[ju])
    neg = np.flatnonzero(~same)
    # lexsort: last key is primary
    neg = neg[np.lexsort((ju[neg], iu[neg], -sim[neg]))][: int(same.sum())]
    rows = np.concatenate([np.flatnonzero(same), np.sort(neg)])
    return np.stack([iu[rows], ju[rows], same[rows].astype(np.int64)], axis=1).astype(np.int64)


def _group_bases(spec: PopulationSpec, rng) -> dict[str, np.ndarray]:
    p = spec.observation_dim
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    bases = {}
    offset = 0
    dominant = None
    for g in spec.groups:
        block = q[:, offset : offset + g.subspace_dim]
        offset += g.subspace_dim
        if dominant is None:
            dominant = block
        elif g.overlap > 0:
            k = min(g.subspace_dim, dominant.shape[1])
            a = g.overlap * math.pi / 2
            tilted = block.copy()
            tilted[:, :k] = math.cos(a) * block[:, :k] + math.sin(a) * dominant[:, :k]
            block, _ = np.linalg.qr(tilted)
        bases[g.tag] = block
    return bases


def _gender_scores(male: np.ndarray, rng) -> np.ndarray:
    centre = np.where(male, 0.82, 0.18)
    return np.clip(centre + 0.12 * rng.standard_normal(len(male)), 0.0, 1.0)


def generate_population(spec: PopulationSpec, rng: np.random.Generator) -> Population:
    spec.validate()
    p = spec.observation_dim
    bases = _group_bases(spec, rng)

    lab_obs, lab_cls, lab_eth, lab_gender = [], [], [], []
    unl_obs, unl_truth, unl_eth, unl_gender = [], [], [], []
    test_obs, test_id, test_eth = [], [], []
    class_identity = []
    acc_pairs = {}
    identity = 0

    def draw(basis, n_ids, n_imgs, gender_mix):
        coef = rng.standard_normal((n_ids, basis.shape[1]))
        means = (coef / np.linalg.norm(coef, axis=1, keepdims=True)) @ basis.T
        male = rng.random(n_ids) < gender_mix
        n = n_ids * n_imgs
        k = basis.shape[1]
        # in-subspace noise is scaled so both parts have the same per-image energy
        inner = math.sqrt(p / k) * rng.standard_normal((n, k)) @ basis.T
        ambient = rng.standard_normal((n, p))
        a = spec.ambient_noise
        noise = math.sqrt(a) * ambient + math.sqrt(1.0 - a) * inner
        obs = np.repeat(means, n_imgs, axis=0) + spec.noise * noise
        return obs, np.repeat(np.arange(n_ids), n_imgs), _gender_scores(np.repeat(male, n_imgs), rng), means

    for g in spec.groups:
        basis = bases[g.tag]
        obs, local, gender, _ = draw(basis, g.labeled_identities, g.images_per_identity, g.gender_mix)
        n_cls = len(class_identity)
        lab_obs.append(obs)
        lab_cls.append(n_cls + local)
        lab_eth += [g.tag] * len(obs)
        lab_gender.append(gender)
        class_identity += list(range(identity, identity + g.labeled_identities))
        identity += g.labeled_identities

        obs, local, gender, _ = draw(basis, g.unlabeled_identities, g.unlabeled_images_per_identity, g.gender_mix)
        unl_obs.append(obs)
        unl_truth.append(identity + local)
        unl_eth += [g.tag] * len(obs)
        unl_gender.append(gender)
        identity += g.unlabeled_identities

        obs, local, _, means = draw(basis, g.test_identities, g.test_images_per_identity, g.gender_mix)
        if len(obs):
            acc_pairs[g.tag] = difficult_pairs(local, means[local])
        test_obs.append(obs)
        test_id.append(identity + local)
        test_eth += [g.tag] * len(obs)
        identity += g.test_identities

    n_unl = sum(len(o) for o in unl_obs)
    labeled = LabeledPool(
        observations=np.concatenate(lab_obs).reshape(-1, p),
        class_ids=np.concatenate(lab_cls).astype(np.int64),
        ethnicity=np.array(lab_eth, dtype=str),
        gender_score=np.concatenate(lab_gender),
    )
    unlabeled = UnlabeledPool(
        observations=np.concatenate(unl_obs).reshape(-1, p),
        pseudo_ids=np.arange(n_unl, dtype=np.int64),
        ethnicity=np.array(unl_eth, dtype=str),
        gender_score=np.concatenate(unl_gender),
        magnitude=np.full(n_unl, np.nan),
        truth_identity=np.concatenate(unl_truth).astype(np.int64),
        planted=np.zeros(n_unl, dtype=bool),
    )
    test = TestSet(
        observations=np.concatenate(test_obs).reshape(-1, p),
        identity=np.concatenate(test_id).astype(np.int64),
        ethnicity=np.array(test_eth, dtype=str),
    )
    return Population(spec, labeled, unlabeled, test, bases, np.array(class_identity, dtype=np.int64), acc_pairs)


def plant_overlap(labeled: LabeledPool, unlabeled: UnlabeledPool, count: int, rng, noise: float | None = None) -> UnlabeledPool:
    """Append ``count`` unlabeled images drawn from distinct labeled identities.

    Each planted image is ``class mean + noise * N(0, I)`` where the class
    mean is estimated from the labeled pool; when ``noise`` is not given it is
    the pooled within-class standard deviation. Planted rows carry
    ``planted=True`` and ``truth_identity = -(class_id + 1)``.
    """
    classes = np.unique(labeled.class_ids)
    if count > len(classes):
        raise InvalidSpec(f"cannot plant {count} samples from {len(classes)} identities")
    if count == 0:
        return unlabeled
    chosen = np.sort(rng.choice(classes, size=count, replace=False))
    if noise is None:
        means = {c: labeled.observations[labeled.class_ids == c].mean(axis=0) for c in classes}
        resid = labeled.observations - np.stack([means[c] for c in labeled.class_ids])
        noise = float(resid.std())
    p = labeled.observations.shape[1]
    obs, eth, gender = [], [], []
    for c in chosen:
        rows = np.flatnonzero(labeled.class_ids == c)
        obs.append(labeled.observations[rows].mean(axis=0) + noise * rng.standard_normal(p))
        eth.append(labeled.ethnicity[rows[0]])
        gender.append(labeled.gender_score[rng.choice(rows)])
    start = int(unlabeled.pseudo_ids.max()) + 1 if len(unlabeled) else 0
    extra = UnlabeledPool(
        observations=np.array(obs),
        pseudo_ids=np.arange(start, start + count, dtype=np.int64),
        ethnicity=np.array(eth, dtype=unlabeled.ethnicity.dtype if len(unlabeled) else str),
        gender_score=np.array(gender),
        magnitude=np.full(count, np.nan),
        truth_identity=-(chosen.astype(np.int64) + 1),
        planted=np.ones(count, dtype=bool),
    )
    return unlabeled.concat(extra)

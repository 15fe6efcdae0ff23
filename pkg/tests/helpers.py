"""Small builders shared by the tests."""

import numpy as np

from arl.core import WeightBank


def unit_columns(rng, d, n):
    w = rng.standard_normal((d, n))
    return w / np.linalg.norm(w, axis=0)


def unit_rows(rng, n, d):
    return unit_columns(rng, d, n).T.copy()


def random_bank(rng, d, n_labeled, tags):
    """Bank with ``n_labeled`` classes plus one unlabeled column per tag (pseudo ids 100, 101, ...)."""
    bank = WeightBank(unit_columns(rng, d, n_labeled), n_labeled)
    if len(tags):
        bank.append(unit_columns(rng, d, len(tags)), 100 + np.arange(len(tags)), list(tags))
    return bank


def small_spec():
    """Three-group population small enough to train in about a second."""
    from arl.synth import GroupSpec, PopulationSpec

    return PopulationSpec(
        groups=[
            GroupSpec("A", labeled_identities=30, test_identities=8, images_per_identity=4, subspace_dim=10),
            GroupSpec("B", labeled_identities=4, unlabeled_identities=20, test_identities=8, subspace_dim=8, overlap=0.2),
            GroupSpec("C", labeled_identities=4, unlabeled_identities=20, test_identities=8, subspace_dim=8, overlap=0.2),
        ],
        observation_dim=32,
        noise=0.1,
    )

"""Column-oriented sample pools (labeled, unlabeled, test)."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np


@dataclass(frozen=True)
class LabeledSample:
    observation: np.ndarray
    class_id: int
    ethnicity: str
    gender_score: float


@dataclass(frozen=True)
class UnlabeledSample:
    observation: np.ndarray
    pseudo_id: int
    ethnicity: str
    gender_score: float
    feature_magnitude: float


class _Pool:
    def __len__(self) -> int:
        return len(self.observations)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return type(self)(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    def concat(self, other):
        return type(self)(
            **{f.name: np.concatenate([getattr(self, f.name), getattr(other, f.name)]) for f in fields(self)}
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class LabeledPool(_Pool):
    observations: np.ndarray
    class_ids: np.ndarray
    ethnicity: np.ndarray
    gender_score: np.ndarray

    def sample(self, i: int) -> LabeledSample:
        return LabeledSample(self.observations[i], int(self.class_ids[i]), str(self.ethnicity[i]), float(self.gender_score[i]))


@dataclass
class UnlabeledPool(_Pool):
    observations: np.ndarray
    pseudo_ids: np.ndarray
    ethnicity: np.ndarray
    gender_score: np.ndarray
    magnitude: np.ndarray
    # hidden ground truth, never read by training code
    truth_identity: np.ndarray
    planted: np.ndarray

    def __post_init__(self):
        if len(np.unique(self.pseudo_ids)) != len(self.pseudo_ids):
            from .core import DuplicatePseudoId

            raise DuplicatePseudoId("pseudo ids must be distinct within a pool")

    def sample(self, i: int) -> UnlabeledSample:
        return UnlabeledSample(
            self.observations[i],
            int(self.pseudo_ids[i]),
            str(self.ethnicity[i]),
            float(self.gender_score[i]),
            float(self.magnitude[i]),
        )

    def with_magnitude(self, magnitude) -> UnlabeledPool:
        arrays = self.arrays()
        arrays["magnitude"] = np.asarray(magnitude, dtype=np.float64)
        return UnlabeledPool(**arrays)


@dataclass
class TestSet(_Pool):
    __test__ = False

    observations: np.ndarray
    identity: np.ndarray
    ethnicity: np.ndarray

    def groups(self) -> list[str]:
        return sorted(set(self.ethnicity.tolist()))

    def group(self, tag: str) -> TestSet:
        return self.subset(np.flatnonzero(self.ethnicity == tag))

"""Hypersphere primitives, hyperparameters and the shared classifier weight bank."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

EPS_NORM = 1e-12


class ARLError(Exception):
    """Base class for every error raised by this package."""


class DegenerateVector(ARLError, ValueError):
    pass


class DimensionMismatch(ARLError, ValueError):
    pass


class DuplicatePseudoId(ARLError, ValueError):
    pass


class MissingWeightColumn(ARLError, KeyError):
    pass


def normalize(v, return_norm: bool = False, eps: float = EPS_NORM):
    """Scale `v` to unit L2 norm.

    With ``return_norm=True`` the pre-normalization magnitude is returned as
    well, which is what magnitude-based unlabeled selection ranks on.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if not norm > eps:
        raise DegenerateVector(f"cannot normalize vector with norm {norm:.3e}")
    unit = v / norm
    if return_norm:
        return unit, norm
    return unit


def normalize_rows(x, eps: float = EPS_NORM) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    if x.size and not np.all(norms > eps):
        bad = int(np.argmin(norms))
        raise DegenerateVector(f"row {bad} has norm {norms[bad]:.3e}")
    return x / norms[:, None], norms


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"{u.shape} vs {v.shape}")
    return min(1.0, max(-1.0, float(u @ v)))


def angle(u, v) -> float:
    return math.acos(cosine(u, v))


@dataclass
class Hyperparams:
    s: float = 64.0
    m: float = 0.5
    t: float = 0.3
    lambda_U: float = 3.0
    lambda_C: float = 10.0
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    labeled_per_batch: int = 48
    unlabeled_per_batch: int = 16

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError("scale s must be positive")
        if not 0 <= self.m < math.pi:
            raise ValueError("margin m must lie in [0, pi)")
        if not 0 < self.t < 1:
            raise ValueError("safe-pair bound t must lie in (0, 1)")
        if self.lambda_U < 0 or self.lambda_C < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.labeled_per_batch < 0 or self.unlabeled_per_batch < 0:
            raise ValueError("batch quotas must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> Hyperparams:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class WeightBank:
    """Unit-column classifier matrix shared by labeled and unlabeled samples.

    Columns ``[0, n_labeled)`` are labeled identity classes; the remaining
    ``M`` columns each belong to one registered unlabeled image, identified by
    its pseudo id and tagged with its ethnicity.
    """

    weights: np.ndarray
    n_labeled: int
    pseudo_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    ethnicity: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype="<U16"))

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.pseudo_ids = np.asarray(self.pseudo_ids, dtype=np.int64)
        self.ethnicity = np.asarray(self.ethnicity).astype(str)
        if self.weights.ndim != 2 or self.weights.shape[0] < 2:
            raise DimensionMismatch("weights must be d x C with d >= 2")
        if self.weights.shape[1] != self.n_labeled + len(self.pseudo_ids):
            raise DimensionMismatch("column count must equal N + M")
        if len(self.ethnicity) != len(self.pseudo_ids):
            raise DimensionMismatch("one ethnicity tag per unlabeled column")
        if len(np.unique(self.pseudo_ids)) != len(self.pseudo_ids):
            raise DuplicatePseudoId("pseudo ids must be distinct")
        self._index = {int(p): self.n_labeled + i for i, p in enumerate(self.pseudo_ids)}

    @classmethod
    def random(cls, dim: int, n_labeled: int, rng: np.random.Generator) -> WeightBank:
        w = rng.standard_normal((dim, n_labeled))
        w /= np.linalg.norm(w, axis=0)
        return cls(w, n_labeled)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_unlabeled(self) -> int:
        return len(self.pseudo_ids)

    @property
    def n_columns(self) -> int:
        return self.weights.shape[1]

    @property
    def labeled_weights(self) -> np.ndarray:
        return self.weights[:, : self.n_labeled]

    @property
    def unlabeled_weights(self) -> np.ndarray:
        return self.weights[:, self.n_labeled :]

    def column_of(self, pseudo_id: int) -> int:
        try:
            return self._index[int(pseudo_id)]
        except KeyError:
            raise MissingWeightColumn(f"no weight column for pseudo id {pseudo_id}") from None

    def columns_of(self, pseudo_ids) -> np.ndarray:
        return np.array([self.column_of(p) for p in pseudo_ids], dtype=np.int64)

    def append(self, columns: np.ndarray, pseudo_ids, ethnicity) -> None:
        """Append unit columns (d x k) for freshly registered unlabeled images."""
        columns = np.asarray(columns, dtype=np.float64).reshape(self.dim, -1)
        pseudo_ids = np.asarray(pseudo_ids, dtype=np.int64)
        if columns.shape[1] != len(pseudo_ids) or len(pseudo_ids) != len(ethnicity):
            raise DimensionMismatch("columns, pseudo ids and tags must align")
        if len(np.unique(pseudo_ids)) != len(pseudo_ids) or any(int(p) in self._index for p in pseudo_ids):
            raise DuplicatePseudoId("pseudo id already registered")
        start = self.n_columns
        self.weights = np.ascontiguousarray(np.concatenate([self.weights, columns], axis=1))
        self.pseudo_ids = np.concatenate([self.pseudo_ids, pseudo_ids])
        self.ethnicity = np.concatenate([self.ethnicity, np.asarray(ethnicity).astype(str)])
        for i, p in enumerate(pseudo_ids):
            self._index[int(p)] = start + i

    def renormalize(self) -> None:
        self.weights /= np.linalg.norm(self.weights, axis=0)

    def copy(self) -> WeightBank:
        return WeightBank(self.weights.copy(), self.n_labeled, self.pseudo_ids.copy(), self.ethnicity.copy())

"""Two-phase training: supervised baseline, then semi-supervised fine-tuning."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core import ARLError, Hyperparams, WeightBank, normalize_rows
from .losses import total_loss
from .pools import LabeledPool, UnlabeledPool
from .sampling import epoch_batches, filter_overlap, gender_balanced_select, select_by_magnitude

log = logging.getLogger(__name__)


class NonFiniteGradient(ARLError, FloatingPointError):
    pass


class DivergenceDetected(ARLError, RuntimeError):
    pass


MODES = {
    # name: (unlabeled loss, cosine penalty, gender-balanced selection, use K-set)
    "baseline": (None, False, False, True),
    "uir": ("uir", False, False, True),
    "arl": ("arl", False, False, True),
    "arl_c": ("arl", True, False, True),
    "arl_c_g": ("arl", True, True, True),
    "arl_no_k": ("arl", False, False, False),
}

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 100


@dataclass
class EmbeddingModel:
    """Linear map to embedding space followed by L2 normalization."""

    projection: np.ndarray

    def __post_init__(self):
        self.projection = np.ascontiguousarray(self.projection, dtype=np.float64)
        d, p = self.projection.shape
        if d > p:
            raise ValueError(f"embedding dim {d} exceeds observation dim {p}")

    @classmethod
    def random(cls, dim: int, obs_dim: int, rng: np.random.Generator) -> EmbeddingModel:
        return cls(rng.standard_normal((dim, obs_dim)) / np.sqrt(obs_dim))

    @property
    def dim(self) -> int:
        return self.projection.shape[0]

    def raw(self, observations) -> np.ndarray:
        return np.asarray(observations, dtype=np.float64) @ self.projection.T

    def embed(self, observations) -> tuple[np.ndarray, np.ndarray]:
        """Unit embeddings (rows) and their pre-normalization magnitudes."""
        return normalize_rows(self.raw(np.atleast_2d(observations)))

    def copy(self) -> EmbeddingModel:
        return EmbeddingModel(self.projection.copy())


def embed(model: EmbeddingModel, observation) -> tuple[np.ndarray, float]:
    f, norm = model.embed(np.asarray(observation)[None, :])
    return f[0], float(norm[0])


@dataclass
class TrainConfig:
    embedding_dim: int = 512
    phase1_epochs: int = 30
    phase2_epochs: int = 20
    phase2_lr_factor: float = 0.1
    overlap_threshold: float = 0.9
    unlabeled_quota: int = 600
    # which unlabeled columns labeled samples classify against: "full" or "batch"
    labeled_bank: str = "full"
    # std of fresh Gaussian jitter added to every training observation each
    # time it is drawn (a stand-in for image augmentation); 0 disables it
    augment_noise: float = 0.08

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        if set(d) - known:
            raise ValueError(f"unknown training options: {sorted(set(d) - known)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass
class StepRecord:
    step: int
    phase: int
    loss_labeled: float
    loss_unlabeled: float
    loss_penalty: float
    total: float
    n_pairs: int


def sgd_step(params: dict, grads: dict, state: OptimizerState, lr: float, momentum: float, weight_decay: float) -> None:
    """In-place momentum SGD: ``v = mu*v + (g + wd*theta); theta -= lr*v``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteGradient(f"{bad} non-finite entries in gradient of {name!r} at step {state.step}")
    for name, theta in params.items():
        v = state.velocity.get(name)
        if v is None or v.shape != theta.shape:
            v = np.zeros_like(theta)
        v *= momentum
        v += grads[name] + weight_decay * theta
        theta -= lr * v
        state.velocity[name] = v
    state.step += 1


def register_unlabeled(bank: WeightBank, pool: UnlabeledPool, model: EmbeddingModel) -> WeightBank:
    """Give every sample its own bank column, initialized to its current embedding."""
    if len(pool):
        feats, _ = model.embed(pool.observations)
        bank.append(feats.T, pool.pseudo_ids, pool.ethnicity)
    return bank


@dataclass
class TrainResult:
    model: EmbeddingModel
    bank: WeightBank
    log: list[StepRecord]
    baseline_model: EmbeddingModel
    baseline_bank: WeightBank
    selected: UnlabeledPool | None = None
    removed_overlap: int = 0


def _phase(
    model: EmbeddingModel,
    bank: WeightBank,
    labeled: LabeledPool,
    unlabeled: UnlabeledPool | None,
    hp: Hyperparams,
    lr: float,
    epochs: int,
    rng: np.random.Generator,
    records: list[StepRecord],
    phase: int,
    *,
    unlabeled_loss: str = "arl",
    use_k: bool = True,
    labeled_bank: str = "full",
    augment: float = 0.0,
) -> None:
    state = OptimizerState()
    n_unl = 0 if unlabeled is None else len(unlabeled)
    quota_u = hp.unlabeled_per_batch if n_unl else 0
    initial = None
    strikes = 0
    for _ in range(epochs):
        for batch in epoch_batches(len(labeled), n_unl, hp.labeled_per_batch, quota_u, rng):
            x_l = labeled.observations[batch.labeled]
            if len(batch.unlabeled):
                x_u = unlabeled.observations[batch.unlabeled]
                pseudo = unlabeled.pseudo_ids[batch.unlabeled]
            else:
                x_u = np.zeros((0, labeled.observations.shape[1]))
                pseudo = np.zeros(0, dtype=np.int64)
            if augment > 0:
                x_l = x_l + augment * rng.standard_normal(x_l.shape)
                x_u = x_u + augment * rng.standard_normal(x_u.shape)
            u_l = model.raw(x_l)
            res = total_loss(
                u_l,
                labeled.class_ids[batch.labeled],
                model.raw(x_u),
                pseudo,
                bank,
                hp,
                use_k=use_k,
                unlabeled_loss=unlabeled_loss,
                labeled_bank=labeled_bank,
            )
            grad_p = res.grad_labeled.T @ x_l + res.grad_unlabeled.T @ x_u
            sgd_step(
                {"projection": model.projection, "bank": bank.weights},
                {"projection": grad_p, "bank": res.grad_weights},
                state,
                lr,
                hp.momentum,
                hp.weight_decay,
            )
            bank.renormalize()
            records.append(
                StepRecord(len(records), phase, res.labeled, res.unlabeled, res.penalty, res.value, res.n_pairs)
            )
            if initial is None:
                initial = res.value
            strikes = strikes + 1 if res.value > DIVERGENCE_FACTOR * initial else 0
            if strikes >= DIVERGENCE_PATIENCE:
                raise DivergenceDetected(
                    f"phase {phase}: loss above {DIVERGENCE_FACTOR}x initial for {strikes} steps"
                )


def train_baseline(labeled: LabeledPool, hp: Hyperparams, cfg: TrainConfig, init_rng, batch_rng) -> TrainResult:
    """Phase 1: margin softmax over the N labeled classes only."""
    n_classes = int(labeled.class_ids.max()) + 1
    model = EmbeddingModel.random(cfg.embedding_dim, labeled.observations.shape[1], init_rng)
    bank = WeightBank.random(cfg.embedding_dim, n_classes, init_rng)
    records: list[StepRecord] = []
    _phase(model, bank, labeled, None, hp, hp.lr, cfg.phase1_epochs, batch_rng, records, phase=1, augment=cfg.augment_noise)
    return TrainResult(model, bank, records, model.copy(), bank.copy())


def select_unlabeled(pool: UnlabeledPool, model: EmbeddingModel, bank: WeightBank, hp: Hyperparams, cfg: TrainConfig, gender: bool = False):
    """Overlap filter, magnitude bookkeeping and per-group quota selection."""
    kept, removed = filter_overlap(pool, model, bank, cfg.overlap_threshold, hp.s)
    _, magnitude = model.embed(kept.observations) if len(kept) else (None, np.zeros(0))
    kept = kept.with_magnitude(magnitude)
    pick = gender_balanced_select if gender else select_by_magnitude
    return pick(kept, cfg.unlabeled_quota), removed


def finetune(
    baseline: TrainResult,
    labeled: LabeledPool,
    unlabeled: UnlabeledPool,
    hp: Hyperparams,
    cfg: TrainConfig,
    mode: str,
    batch_rng,
) -> TrainResult:
    """Phase 2 from a phase-1 checkpoint; the checkpoint itself is not modified."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {sorted(MODES)}")
    unlabeled_loss, penalty, gender, use_k = MODES[mode]
    records = list(baseline.log)
    model = baseline.baseline_model.copy()
    bank = baseline.baseline_bank.copy()
    if unlabeled_loss is None:
        return TrainResult(model, bank, records, baseline.baseline_model, baseline.baseline_bank)

    selected, removed = select_unlabeled(unlabeled, model, bank, hp, cfg, gender)
    log.info("mode %s: removed %d overlapping, selected %d unlabeled", mode, removed, len(selected))
    hp2 = hp if penalty else dataclasses.replace(hp, lambda_C=0.0)
    if unlabeled_loss == "arl":
        register_unlabeled(bank, selected, model)
        labeled_bank = cfg.labeled_bank
    else:
        labeled_bank = "none"
    _phase(
        model,
        bank,
        labeled,
        selected,
        hp2,
        hp.lr * cfg.phase2_lr_factor,
        cfg.phase2_epochs,
        batch_rng,
        records,
        phase=2,
        unlabeled_loss=unlabeled_loss,
        use_k=use_k,
        labeled_bank=labeled_bank,
        augment=cfg.augment_noise,
    )
    return TrainResult(model, bank, records, baseline.baseline_model, baseline.baseline_bank, selected, removed)

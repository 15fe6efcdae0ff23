"""Experiment configuration and the generate -> train -> evaluate pipeline."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .core import Hyperparams
from .metrics import DEFAULT_FPRS, EvalReport, evaluate
from .rng import stream
from .synth import Population, PopulationSpec, generate_population, plant_overlap, standard_spec
from .train import MODES, TrainConfig, TrainResult, finetune, train_baseline


@dataclass
class ExperimentConfig:
    population: PopulationSpec = field(default_factory=standard_spec)
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    training: TrainConfig = field(default_factory=TrainConfig)
    mode: str = "arl_c"
    seed: int = 0
    # extra unlabeled samples copied from labeled identities at generation
    plant_overlap: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {sorted(MODES)}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.plant_overlap < 0:
            raise ValueError("plant_overlap must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "population": self.population.to_dict(),
            "hyperparams": self.hyperparams.to_dict(),
            "training": self.training.to_dict(),
            "mode": self.mode,
            "seed": int(self.seed),
            "plant_overlap": self.plant_overlap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {"population", "hyperparams", "training", "mode", "seed", "plant_overlap"}
        if set(d) - known:
            raise ValueError(f"unknown config sections: {sorted(set(d) - known)}")
        base = cls()
        return cls(
            population=PopulationSpec.from_dict(d["population"]) if "population" in d else base.population,
            hyperparams=Hyperparams.from_dict({**base.hyperparams.to_dict(), **d.get("hyperparams", {})}),
            training=TrainConfig.from_dict({**base.training.to_dict(), **d.get("training", {})}),
            mode=d.get("mode", base.mode),
            seed=int(d.get("seed", base.seed)),
            plant_overlap=int(d.get("plant_overlap", 0)),
        )

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def with_override(self, dotted: str, value) -> ExperimentConfig:
        """Copy with one ``section.field`` (or top-level) entry changed."""
        d = self.to_dict()
        head, _, tail = dotted.partition(".")
        if tail:
            if head not in d or not isinstance(d[head], dict) or tail not in d[head]:
                raise ValueError(f"unknown config key {dotted!r}")
            d[head][tail] = value
        else:
            if head not in d:
                raise ValueError(f"unknown config key {dotted!r}")
            d[head] = value
        return ExperimentConfig.from_dict(d)


def generate(config: ExperimentConfig) -> Population:
    pop = generate_population(config.population, stream(config.seed, "population"))
    if config.plant_overlap:
        pop.unlabeled = plant_overlap(pop.labeled, pop.unlabeled, config.plant_overlap, stream(config.seed, "overlap"))
    return pop


@dataclass
class RunResult:
    baseline: TrainResult
    final: TrainResult
    mode: str


def run_baseline(config: ExperimentConfig, population: Population) -> TrainResult:
    return train_baseline(
        population.labeled,
        config.hyperparams,
        config.training,
        stream(config.seed, "init"),
        stream(config.seed, "phase1"),
    )


def run_training(config: ExperimentConfig, population: Population, baseline: TrainResult | None = None) -> RunResult:
    """Phase 1 (unless a phase-1 result is passed in) then phase 2 for ``config.mode``."""
    if baseline is None:
        baseline = run_baseline(config, population)
    final = finetune(
        baseline,
        population.labeled,
        population.unlabeled,
        config.hyperparams,
        config.training,
        config.mode,
        stream(config.seed, "phase2"),
    )
    return RunResult(baseline, final, config.mode)


def evaluate_model(model, population: Population, fprs=DEFAULT_FPRS) -> EvalReport:
    return evaluate(model, population.test, fprs, population.accuracy_pairs or None)


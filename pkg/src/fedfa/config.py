"""Experiment configuration: dataclasses with JSON round-tripping."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

ALGORITHMS = ("fedavg", "fedprox", "fedavgm", "mixup",
              "fedfa", "fedfa-c", "fedfa-r")
DATASET_KINDS = ("feature_shift", "dirichlet", "size_skew")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "feature_shift"
    classes: int = 8
    image_size: int = 8
    channels: int = 3
    noise: float = 0.8
    train_per_client: int = 48
    test_per_client: int = 128
    shift_strength: float = 1.0  # feature_shift
    concentration: float = 0.5   # dirichlet
    size_ratio: float = 4.0      # size_skew
    test_fraction: float = 0.25  # partition-based kinds

    def validate(self) -> None:
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if self.image_size % 4 != 0:
            raise ValueError("image_size must be divisible by 4 (two pool layers)")
        if self.train_per_client < 1 or self.test_per_client < 1:
            raise ValueError("per-client sample counts must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str = "fedfa"
    rounds: int = 30
    local_epochs: int = 1
    lr: float = 0.05
    batch_size: int = 32
    clients: int = 4
    participation: float = 1.0
    aggregation: str = "samples"  # or "uniform"
    seed: int = 0
    # augmentation knobs (fedfa family)
    p: float = 0.5
    alpha: float = 0.99
    random_std: float = 0.5
    force_zero_gamma: bool = False
    # baseline knobs
    prox_mu: float = 0.01
    server_momentum: float = 0.9
    mixup_beta: float = 0.2
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    run_name: str | None = None

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; "
                             f"choose one of {ALGORITHMS}")
        if self.rounds < 0:
            raise ValueError("rounds must be nonnegative")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.clients < 1:
            raise ValueError("clients must be positive")
        if not 0.0 < self.participation <= 1.0:
            raise ValueError("participation must lie in (0, 1]")
        if self.aggregation not in ("samples", "uniform"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self.dataset.validate()

    @property
    def name(self) -> str:
        return self.run_name or f"{self.algorithm}_seed{self.seed}"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        ds = d.pop("dataset", {})
        _reject_unknown(ds, DatasetConfig, "dataset")
        _reject_unknown(d, cls, "experiment")
        cfg = cls(dataset=DatasetConfig(**ds), **d)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def _reject_unknown(d: dict, cls, where: str) -> None:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {where} config keys: {sorted(unknown)}")

"""Dataclass configs with JSON round-trip."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .objectives import MethodVariant

PRESETS = ("mild", "severe", "collapse")


@dataclass
class AdaptConfig:
    """All adaptation hyperparameters."""

    k: int = 5                 # clusters per modality
    gamma: float = 0.9         # centroid momentum
    beta: float = 10.0         # adaptive-weight temperature
    eps_w: float = 0.1         # entropy-minimization weight
    lam: float = 5.0           # alignment-loss weight
    alpha: float = 0.3         # diversity-loss weight
    lr: float = 1e-3
    weight_decay: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 128
    st_confidence: float = 0.9     # pseudo-label threshold for the ST baseline
    norm_momentum: float = 0.1     # EMA momentum for the Norm baseline

    def validate(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError("gamma must lie in [0, 1)")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if not (0.5 < self.st_confidence <= 1.0):
            raise ConfigError("st_confidence must lie in (0.5, 1]")
        for name in ("eps_w", "lam", "alpha", "lr", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


@dataclass
class BenchmarkConfig:
    """Synthetic drift benchmark parameters."""

    preset: str = "mild"
    n_cores: int = 4
    d_z: int = 8
    d_in: int = 16
    severity: float = 0.3
    outlier_frac: float = 0.0
    outlier_mode: str = "scatter"   # "scatter", "clump", or "mixed"
    outlier_spread: float = 0.6
    label_noise: float = 0.02
    style_noise: float = 0.15
    # target style multiplier; None derives it from severity as 1 + severity
    style_drift: object = None
    # scalar, or one spread per core (tight cores act as stable anchors)
    core_jitter: object = 0.35
    p_hate: list = field(default_factory=lambda: [1.0, 1.0, 0.0, 0.0])
    n_source: int = 2048
    n_target: int = 2048

    def validate(self):
        if self.preset not in PRESETS + ("custom",):
            raise ConfigError(f"unknown preset {self.preset!r}")
        if len(self.p_hate) != self.n_cores:
            raise ConfigError("p_hate must list one probability per core")
        if any(not (0.0 <= p <= 1.0) for p in self.p_hate):
            raise ConfigError("p_hate entries must lie in [0, 1]")
        if not (0.0 <= self.outlier_frac < 1.0):
            raise ConfigError("outlier_frac must lie in [0, 1)")
        if self.outlier_mode not in ("scatter", "clump", "mixed"):
            raise ConfigError(f"unknown outlier_mode {self.outlier_mode!r}")


def preset_benchmark(name: str) -> BenchmarkConfig:
    if name == "mild":
        return BenchmarkConfig(preset="mild", severity=0.3)
    if name == "severe":
        # heavy rendering drift with near-duplicate junk outliers; two tight
        # "anchor" cores (one per class) next to two diffuse negative cores
        return BenchmarkConfig(
            preset="severe", severity=1.2,
            style_noise=0.10, style_drift=0.6,
            core_jitter=[0.05, 0.05, 0.5, 0.5],
            p_hate=[1.0, 0.0, 0.0, 0.0],
            outlier_frac=0.2, outlier_mode="clump", outlier_spread=0.6,
            n_target=4096,
        )
    if name == "collapse":
        # tight, well-separated cores whose labels are genuinely mixed:
        # entropy minimization homogenizes each cluster's predictions
        return BenchmarkConfig(
            preset="collapse", severity=0.8,
            p_hate=[0.3, 0.7, 0.35, 0.65], style_noise=0.1,
            core_jitter=0.1, n_target=4096,
        )
    raise ConfigError(f"unknown preset {name!r}")


@dataclass
class ExperimentConfig:
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    variants: list = field(default_factory=lambda: ["source", "scanner"])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    d_h: int = 32
    n_classes: int = 2
    pretrain_epochs: int = 50
    out_dir: str = "runs"
    workers: int = 1

    def validate(self):
        self.benchmark.validate()
        self.adapt.validate()
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for v in self.variants:
            try:
                MethodVariant(v)
            except ValueError as exc:
                raise ConfigError(f"unknown variant {v!r}") from exc

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        raw = json.loads(text)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(raw)
        if "benchmark" in kwargs:
            kwargs["benchmark"] = _sub(BenchmarkConfig, kwargs["benchmark"])
        if "adapt" in kwargs:
            kwargs["adapt"] = _sub(AdaptConfig, kwargs["adapt"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def _sub(klass, raw: dict):
    known = {f.name for f in fields(klass)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown {klass.__name__} fields: {sorted(unknown)}")
    return klass(**raw)

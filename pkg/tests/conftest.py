import numpy as np
import pytest

from driftadapt.config import AdaptConfig, BenchmarkConfig, ExperimentConfig
from driftadapt.model import MODALITIES, ModelDims, SourceModel


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def tiny_model(seed: int = 0) -> SourceModel:
    return SourceModel(ModelDims(d_in=4, d_h=6, n_classes=2), seed=seed)


def tiny_batch(rng, n: int = 3, d_in: int = 4) -> dict:
    return {m: rng.normal(0.0, 1.0, (n, d_in)) for m in MODALITIES}


def tiny_experiment(tmp_path) -> ExperimentConfig:
    """A benchmark small enough for sub-second pretrain + adapt runs."""
    cfg = ExperimentConfig(
        benchmark=BenchmarkConfig(
            preset="custom", n_cores=2, d_z=4, d_in=4, severity=0.5,
            p_hate=[1.0, 0.0], n_source=96, n_target=96, core_jitter=0.2,
        ),
        adapt=AdaptConfig(k=2, batch_size=32),
        variants=["source", "scanner"],
        seeds=[0],
        d_h=6,
        pretrain_epochs=3,
        out_dir=str(tmp_path),
    )
    return cfg

import numpy as np
import pytest

from ubcl.datapipe import default_synth_spec, default_test_subjects, split_and_normalize, synth_generate
from ubcl.evalkit import run_single_seed
from ubcl.model import ModelConfig
from ubcl.training import TrainConfig


@pytest.fixture(scope="session")
def synth_bundle():
    spec = default_synth_spec()
    dataset = synth_generate(spec, seed=42)
    return split_and_normalize(dataset, default_test_subjects(dataset))


@pytest.fixture(scope="session")
def synth_config():
    spec = default_synth_spec()
    return ModelConfig(spec.channels, spec.window_len, spec.num_classes)


@pytest.fixture(scope="session")
def trained_model(synth_bundle, synth_config):
    """One trained seed on the default synthetic task, shared across modules."""
    tc = TrainConfig(max_epochs=50, num_seeds=1, master_seed=42)
    art = run_single_seed(synth_config, tc, synth_bundle, 0)
    return synth_config, art["weights"], art


def tiny_config(**overrides) -> ModelConfig:
    base = dict(channels=2, window_len=8, num_classes=2, conv_filters=3,
                kernel=3, lstm_hidden=4)
    base.update(overrides)
    return ModelConfig(**base)


def grad_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return float(num / den)

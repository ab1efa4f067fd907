import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci", deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")

torch.manual_seed(0)


@pytest.fixture
def rng():
    g = torch.Generator()
    g.manual_seed(1234)
    return g


@pytest.fixture(scope="session")
def tiny_model_cfg():
    from mogan.models import ModelConfig

    return ModelConfig(width=32, depth=2, heads=2, decoder_width=16, decoder_hidden=8)

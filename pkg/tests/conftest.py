import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_data():
    """Two small synthetic domains for protocol-level tests."""
    from fedccrl.data import DEFAULT_DOMAIN_MEANS, DEFAULT_DOMAIN_STDS, SyntheticConfig, generate_synthetic

    cfg = SyntheticConfig(
        num_domains=2,
        num_classes=3,
        samples_per_domain=24,
        image_dims=(3, 4, 4),
        domain_channel_means=DEFAULT_DOMAIN_MEANS[:2],
        domain_channel_stds=DEFAULT_DOMAIN_STDS[:2],
        seed=3,
    )
    return generate_synthetic(cfg)


def pytest_configure(config):
    config.acceptance_results = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "acceptance_results", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])

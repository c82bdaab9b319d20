import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from landmark.config import RunConfig
from landmark.synth import compute_marginals, generate_dataset

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SMALL = dict(n_train=60, n_eval=20, n_zeroshot=10)


@pytest.fixture(scope="session")
def small_cfg():
    return RunConfig(**SMALL)


@pytest.fixture(scope="session")
def small_ds(small_cfg):
    return generate_dataset(small_cfg.synth(), small_cfg.seed, small_cfg.to_text())


@pytest.fixture(scope="session")
def small_marginals(small_ds, small_cfg):
    return compute_marginals(small_ds.subset("train"), small_cfg.n_entity_classes,
                             small_cfg.n_predicates, small_cfg.smoothing_eps)


@pytest.fixture(scope="session")
def desk_cfg():
    return RunConfig()


@pytest.fixture(scope="session")
def desk_ds(desk_cfg):
    return generate_dataset(desk_cfg.synth(), desk_cfg.seed, desk_cfg.to_text())


@pytest.fixture(scope="session")
def desk_marginals(desk_ds, desk_cfg):
    return compute_marginals(desk_ds.subset("train"), desk_cfg.n_entity_classes,
                             desk_cfg.n_predicates, desk_cfg.smoothing_eps)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def trained_small(small_ds, small_cfg, small_marginals):
    """A briefly trained full model; enough for 'after training' structural checks."""
    from landmark.model import train

    return train(small_ds, small_cfg.with_overrides(iterations=60, batch_size=8), small_marginals)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])

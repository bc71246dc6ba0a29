import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "rstm", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("rstm")

# filled by test_acceptance, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY = dict(image_size=32, style_dim=8, enc_channels=[6, 8, 8], fuse_channels=8, dec_const_channels=8, dec_channels=[8, 8, 6])


@pytest.fixture(scope="session")
def tiny_faces():
    from rstm.toyfaces import concat_datasets, generate

    return concat_datasets([generate(24, 1, "studio", size=32), generate(24, 2, "wild", size=32)])


@pytest.fixture(scope="session")
def tiny_stage1(tiny_faces):
    """Stage-1 state of a small 32x32 model after a few steps."""
    from rstm.model import ModelConfig
    from rstm.training import Stage1Trainer, TrainConfig

    trainer = Stage1Trainer(ModelConfig(**TINY), TrainConfig(batch=4, steps=3, seed=3))
    trainer.run(tiny_faces)
    return trainer.state()

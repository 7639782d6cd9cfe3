import numpy as np
import pytest

from shadoc.config import ModelConfig

TINY = ModelConfig(base_channels=4, blocks_per_level=1, heads=2, spp_scales=(1, 2), std_channels=4, std_blocks=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return TINY


ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        name, ok, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num} [{'PASS' if ok else 'FAIL'}] {name}: {detail}")

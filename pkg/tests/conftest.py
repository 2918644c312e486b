import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from activeauth.pipeline import PipelineConfig, build_experiment  # noqa: E402
from activeauth.synth import GeneratorConfig, generate  # noqa: E402


@pytest.fixture(scope="session")
def small_dataset():
    return generate(GeneratorConfig(n_users=5, days_per_user=5, sessions_per_day=5, seed=11))


@pytest.fixture(scope="session")
def small_experiment(small_dataset):
    return build_experiment(small_dataset, PipelineConfig(seed=11))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "REPORT", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.REPORT):
        terminalreporter.write_line(mod.REPORT[n])

import pytest

from shelfrec.benchmark import BenchmarkConfig, run_benchmark


@pytest.fixture(scope="session")
def default_campaign():
    """The 30-seed default benchmark with the full ablation grid, shared by
    the offline-ordering and ablation acceptance criteria."""
    return run_benchmark(BenchmarkConfig(n_seeds=30, base_seed=0), ablations=True)


def pytest_terminal_summary(terminalreporter):
    import sys

    lines = []
    for name, module in list(sys.modules.items()):
        if name.endswith("test_acceptance"):
            lines = getattr(module, "RESULT_LINES", [])
            break
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

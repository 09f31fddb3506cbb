import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def small_index(tmp_path_factory):
    """A few base/novel classes with enough test supports for 5-shot episodes."""
    from aadfss.dataset import GenConfig, generate_dataset

    cfg = GenConfig(train_support=4, train_query=4, test_support=5, test_query=3,
                    base_classes=("disk", "square", "cross"), novel_classes=("hexagon", "arrow"))
    return generate_dataset(cfg, 11, tmp_path_factory.mktemp("small"))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

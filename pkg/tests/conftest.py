import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gcnslim.dataset import InteractionDataset, SyntheticSkewConfig, generate_synthetic, split  # noqa: E402


def dataset_from_dense(X) -> InteractionDataset:
    u, i = np.nonzero(np.asarray(X))
    return InteractionDataset.from_arrays(u, i, X.shape[0], X.shape[1])


@pytest.fixture
def toy_X():
    # 3 users, 2 items; user 0 has both items
    return np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])


@pytest.fixture
def toy_train(toy_X):
    return dataset_from_dense(toy_X)


@pytest.fixture(scope="session")
def small_split():
    cfg = SyntheticSkewConfig(num_users=200, num_items=30, target_interactions=3000,
                              seed=3, num_clusters=4, affinity=20.0)
    return split(generate_synthetic(cfg), seed=5)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)

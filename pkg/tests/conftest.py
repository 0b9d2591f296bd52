import numpy as np
import pytest

from advam.config import DataConfig, ModelConfig, RunConfig
from advam import data


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_cfg():
    return RunConfig(
        data=DataConfig(n_train=12, n_dev=4, n_test=4, min_frames=20, max_frames=30, context=7,
                        feat_dim=16),
        model=ModelConfig(depth=2, base_channels=4, d_hidden=16, c_hidden=16),
    ).with_train(epochs=2, batch_size=16, lr=1e-3)


@pytest.fixture(scope="session")
def tiny_corpus(tiny_cfg):
    return data.synthesize_corpus(tiny_cfg.data)


@pytest.fixture(scope="session")
def tiny_splits(tiny_corpus, tiny_cfg):
    return {s: data.prepare_split(tiny_corpus, s, tiny_cfg.data.context) for s in data.SPLITS}


# acceptance bookkeeping: one line per criterion in the terminal summary
_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    verdict = "PASS" if rep.passed else "FAIL"
    _CRITERIA.append((number, f"criterion {number} {verdict}: {title}" + (f" | {detail}" if detail else "")))


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)

import time

import numpy as np
import pytest

from srmap import netrt

CHAIN_MANIFEST = """\
# two inputs, three hidden neurons, one output, all linear
input h=1 w=2 c=1
labels score
dense out=3 bias=0
dense out=1 bias=0
"""


@pytest.fixture
def chain_files(tmp_path):
    m = tmp_path / "chain.manifest"
    w = tmp_path / "chain.weights"
    m.write_text(CHAIN_MANIFEST)
    w.write_bytes(np.ones(9, dtype="<f4").tobytes())
    return m, w


@pytest.fixture
def chain_net(chain_files):
    return netrt.load_network(*chain_files)


def random_positive_net(rng, max_param_layers=4, max_side=16, softmax=True):
    """Bias-free net with positive weights: conv blocks, optional pooling, dense head."""
    h = int(rng.integers(6, max_side + 1))
    w = int(rng.integers(6, max_side + 1))
    c = int(rng.choice([1, 3]))
    n_conv = int(rng.integers(1, max_param_layers))
    layers, shape = [], (h, w, c)
    for _ in range(n_conv):
        k = int(rng.integers(1, 4))
        if k > min(shape[0], shape[1]):
            break
        cout = int(rng.integers(1, 5))
        pad = int(rng.integers(0, k))
        stride = int(rng.integers(1, 3))
        layer = netrt.Conv2D(rng.uniform(0.05, 1.0, (cout, shape[2], k, k)), None, stride, pad)
        layers += [layer, netrt.ReLU()]
        shape = layer.output_shape(shape)
        if rng.random() < 0.5 and min(shape[0], shape[1]) >= 2:
            pool = netrt.MaxPool2D(2, 2, int(rng.integers(1, 3)))
            layers.append(pool)
            shape = pool.output_shape(shape)
    n_out = int(rng.integers(1, 5))
    layers += [netrt.Flatten(), netrt.Dense(rng.uniform(0.05, 1.0, (n_out, int(np.prod(shape)))))]
    if softmax:
        layers.append(netrt.Softmax())
    return netrt.Network(layers, (h, w, c))


def random_mixed_net(rng, side=8):
    """Small conv net with mixed-sign weights and biases."""
    layers = [
        netrt.Conv2D(rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3), 1, 1),
        netrt.ReLU(),
        netrt.MaxPool2D(2, 2, 2),
        netrt.Conv2D(rng.normal(size=(4, 3, 2, 2)), rng.normal(size=4), 1, 0),
        netrt.ReLU(),
        netrt.Flatten(),
        netrt.Dense(rng.normal(size=(3, 4 * (side // 2 - 1) ** 2)), rng.normal(size=3)),
        netrt.Softmax(),
    ]
    return netrt.Network(layers, (side, side, 2))


class Stopwatch:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion at the end of the run

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


def pytest_runtest_logreport(report):
    label = getattr(report, "criterion_label", None)
    if label is None:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        # a criterion spread over several tests fails if any of them fails
        if _CRITERIA.get(label) != "failed":
            _CRITERIA[label] = report.outcome


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.criterion_label = m.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: int(s.split(":")[0][1:])):
        verdict = "PASS" if _CRITERIA[label] == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {label}")


@pytest.fixture(scope="session")
def trained_fixture():
    from srmap import fixture

    return fixture.train_fixture(fixture.FixtureSpec(seed=0))

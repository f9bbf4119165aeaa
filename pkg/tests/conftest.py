import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    """Small synthetic N-MNIST-like corpus (digits dataset, 34x34 AER)."""
    from memhots.synthetic import make_corpus

    root = tmp_path_factory.mktemp("synth") / "corpus"
    make_corpus(root, n_train=6, n_test=3, seed=0)
    return root


@pytest.fixture(scope="session")
def synth_split(synth_root):
    from memhots.events import sample_slice

    train = sample_slice(synth_root, "train", 1.0, 0).recordings
    test = sample_slice(synth_root, "test", 1.0, 0).recordings
    return train, test


@pytest.fixture(scope="session")
def small_net(synth_split):
    """A two-layer network fitted on the synthetic training split."""
    from memhots.network import HOTSNetwork, default_layers

    train, _ = synth_split
    net = HOTSNetwork(default_layers(clusters=(8, 16), radii=(2, 1), pool=4),
                      surfaces_per_layer=4000, batch_size=256, max_iter=40, random_state=3)
    return net.fit(train)


# -- acceptance summary ------------------------------------------------------

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    marker = report.keywords.get("criterion")
    if marker is None:
        return
    key = report.nodeid
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        reason = ""
        if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
            reason = report.longrepr[2]
        _ACCEPTANCE[key] = (status, reason)


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.keywords["criterion"] = m.args[0]
            item.user_properties.append(("criterion", m.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    rows = []
    for item_id, (status, reason) in _ACCEPTANCE.items():
        rows.append((item_id, status, reason))
    terminalreporter.section("acceptance criteria")
    for item_id, status, reason in sorted(rows, key=_criterion_order):
        name = item_id.split("::")[-1]
        line = f"{status:4}  {name}"
        if reason:
            line += f"  ({reason.removeprefix('Skipped: ')})"
        terminalreporter.write_line(line)


def _criterion_order(row):
    name = row[0].split("::")[-1]
    digits = "".join(ch for ch in name.split("_")[1] if ch.isdigit()) if "_" in name else ""
    return (int(digits) if digits else 99, name)

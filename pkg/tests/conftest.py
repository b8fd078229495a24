import os
from pathlib import Path

import numpy as np
import pytest

from lbcnn.data import load_idx, load_pnm_dir

DATA_ROOT = Path(os.environ.get("LBCNN_DATA", "/root/data"))
MNIST_DIR = DATA_ROOT / "mnist"
ORL_DIR = DATA_ROOT / "orl64"


def _mnist_paths(prefix):
    return MNIST_DIR / f"{prefix}-images-idx3-ubyte", MNIST_DIR / f"{prefix}-labels-idx1-ubyte"


@pytest.fixture(scope="session")
def mnist():
    train, test = _mnist_paths("train"), _mnist_paths("t10k")
    if not all(p.exists() for p in (*train, *test)):
        pytest.skip(f"MNIST IDX files not found under {MNIST_DIR}")
    return load_idx(*train), load_idx(*test)


@pytest.fixture(scope="session")
def mnist_paths():
    train, test = _mnist_paths("train"), _mnist_paths("t10k")
    if not all(p.exists() for p in (*train, *test)):
        pytest.skip(f"MNIST IDX files not found under {MNIST_DIR}")
    return train, test


@pytest.fixture(scope="session")
def orl():
    if not ORL_DIR.is_dir():
        pytest.skip(f"64x64 ORL tree not found at {ORL_DIR} (see notebooks/prepare_orl.py)")
    return load_pnm_dir(ORL_DIR)


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


# ---- acceptance bookkeeping -------------------------------------------------

FULL = os.environ.get("LBCNN_FULL") == "1"
_CRITERIA = {}  # n -> {"title", "outcomes": [..], "notes": [..]}


def pytest_collection_modifyitems(config, items):
    skip_full = pytest.mark.skip(reason="full-scale run; set LBCNN_FULL=1")
    for item in items:
        if "full" in item.keywords and not FULL:
            item.add_marker(skip_full)


def _criterion(item):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return None
    n, title = mark.args
    return _CRITERIA.setdefault(n, {"title": title, "outcomes": [], "notes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    entry = _criterion(item)
    if entry is None:
        return
    if rep.when == "call" or (rep.when == "setup" and (rep.skipped or rep.failed)):
        entry["outcomes"].append((item.name, rep.outcome))


@pytest.fixture
def note(request):
    """Attach a measured value to the acceptance line of the current test."""
    entry = _criterion(request.node)

    def add(text):
        if entry is not None:
            entry["notes"].append(text)
    return add


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        entry = _CRITERIA[n]
        states = [o for _, o in entry["outcomes"]]
        if "failed" in states:
            verdict = "FAIL"
        elif states and all(s == "skipped" for s in states):
            verdict = "SKIP"
        elif "passed" in states:
            verdict = "PASS" if "skipped" not in states else "PASS (partial: some parts skipped)"
        else:
            verdict = "NOT RUN"
        detail = "; ".join(entry["notes"])
        tr.write_line(f"criterion {n:>2} {verdict:<5} {entry['title']}" + (f" [{detail}]" if detail else ""))

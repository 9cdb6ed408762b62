import os

import numpy as np
import pytest

from cran_highlight import pipeline
from cran_highlight.dataset import load_ground_truth, synth_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _corpus(tmp_path_factory, name, n, genres, seed):
    root = tmp_path_factory.mktemp(name)
    manifest = synth_corpus(n, genres, seed, str(root))
    cache = os.path.join(root, "cache")
    summary = pipeline.preprocess(manifest, cache)
    assert not summary["failed"]
    return {
        "root": str(root),
        "manifest": manifest,
        "manifest_path": os.path.join(root, "manifest.csv"),
        "gt_path": os.path.join(root, "ground_truth.csv"),
        "ground_truth": load_ground_truth(os.path.join(root, "ground_truth.csv")),
        "cache": cache,
    }


@pytest.fixture(scope="session")
def corpus20(tmp_path_factory):
    """20 tracks, 4 genres."""
    return _corpus(tmp_path_factory, "corpus20", 20, 4, seed=7)


@pytest.fixture(scope="session")
def corpus50(tmp_path_factory):
    """50 tracks, 4 genres."""
    return _corpus(tmp_path_factory, "corpus50", 50, 4, seed=11)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    results = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_c" not in nodeid or rep.when not in ("call", "setup"):
                continue
            crit = int(nodeid.split("::test_c")[1][:2])
            ok = outcome == "passed"
            results[crit] = results.get(crit, True) and ok
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(results):
        terminalreporter.write_line(f"criterion {crit:2d}: {'PASS' if results[crit] else 'FAIL'}")

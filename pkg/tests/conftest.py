"""Shared fixtures and the acceptance-criteria terminal summary."""

import os
import time

import pytest

# wall-clock cost of the shared session fixtures, so acceptance tests can
# charge it against their runtime budgets
BUILD_SECONDS = {}

# ---------------------------------------------------------------------------
# acceptance reporting: tests in test_acceptance.py register a one-line
# criterion label via record_property("criterion", ...); after the run we
# print one PASS/FAIL/SKIP line per criterion.
# ---------------------------------------------------------------------------

_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if report.when == "call" or (report.when == "setup" and report.skipped):
        labels = [v for k, v in report.user_properties if k == "criterion"]
        if labels:
            _ACCEPTANCE.append((labels[0], report.outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, outcome in _ACCEPTANCE:
        word = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(
            outcome, outcome.upper())
        markup = {"PASS": {"green": True}, "FAIL": {"red": True}}.get(word, {})
        terminalreporter.write_line(f"{word}  {label}", **markup)


# ---------------------------------------------------------------------------
# shared synthetic corpus + trained model (built once per session, on demand)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """A 200-image corpus (40 scenes x 5 variants) with manifest + skin data."""
    from photoqc import synthetic

    root = tmp_path_factory.mktemp("corpus")
    started = time.perf_counter()
    synthetic.generate_corpus(root, n_scenes=40, seed=7)
    synthetic.generate_skin_pixel_dataset(root / "skin.txt", seed=7)
    BUILD_SECONDS["corpus"] = time.perf_counter() - started
    return root


@pytest.fixture(scope="session")
def trained(corpus_dir, tmp_path_factory):
    """Full pipeline run (seed 7) over the shared corpus."""
    from photoqc import pipeline

    out = tmp_path_factory.mktemp("trained")
    old = os.environ.get("SOURCE_DATE_EPOCH")
    os.environ["SOURCE_DATE_EPOCH"] = "1700000000"
    started = time.perf_counter()
    try:
        result = pipeline.run_full_pipeline(
            manifest_path=corpus_dir / "manifest.csv",
            skin_data_path=corpus_dir / "skin.txt",
            out_dir=out, seed=7, grid="fast", fpr_cap=0.2)
    finally:
        BUILD_SECONDS["pipeline"] = time.perf_counter() - started
        if old is None:
            os.environ.pop("SOURCE_DATE_EPOCH", None)
        else:
            os.environ["SOURCE_DATE_EPOCH"] = old
    return {"corpus": corpus_dir, "out": out, **result}


@pytest.fixture()
def demo_model():
    from photoqc import synthetic

    return synthetic.build_demo_model()

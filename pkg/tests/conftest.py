import time
from contextlib import contextmanager

import pytest

from avsep.phantom import generate, preset_spec
from avsep.pipeline import train

TRAIN_PRESETS = ("straight-contact", "helix-pair", "h-cross", "bend-contact",
                 "straight-contact", "helix-pair")

_criteria = {}


def training_scenes():
    return [generate(preset_spec(p), 100 + i) for i, p in enumerate(TRAIN_PRESETS)]


@pytest.fixture(scope="session")
def trained_model():
    """Model with 2-D tables, fitted once per session on six ground-truth scenes."""
    return train(training_scenes(), saf=True)


@pytest.fixture
def criterion():
    """Context manager that records a PASS/FAIL line for an acceptance criterion.

    The block may set ``rec["detail"]`` to add measured numbers to the line.
    """
    @contextmanager
    def run(number, title):
        rec = {"detail": ""}
        t0 = time.perf_counter()
        try:
            yield rec
        except BaseException as exc:
            _criteria[number] = ("FAIL", title, rec["detail"] or str(exc).splitlines()[0][:120],
                                 time.perf_counter() - t0)
            raise
        _criteria[number] = ("PASS", title, rec["detail"], time.perf_counter() - t0)
    return run


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        status, title, detail, secs = _criteria[n]
        extra = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"criterion {n}: {status} {title}{extra} [{secs:.1f} s]")

from pathlib import Path

import numpy as np
import pytest

from chf_hybrid.correlations import ChfRecord
from chf_hybrid.dataset import shuffle_split, synth_generate

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def golden_path():
    return DATA / "correlation_golden.csv"


@pytest.fixture(scope="session")
def synth_records():
    """A small Biasi-truth dataset shared by the model tests."""
    return synth_generate(300, seed=11)


@pytest.fixture(scope="session")
def synth_split(synth_records):
    return shuffle_split(synth_records, seed=5)


def random_records(n, seed=0):
    """In-range inputs for solver checks; chf and quality are placeholders."""
    rng = np.random.default_rng(seed)
    return [
        ChfRecord(d, l, p, g, dh, 0.0, 1.0)
        for d, l, p, g, dh in zip(
            rng.uniform(0.003, 0.0375, n), rng.uniform(0.2, 3.7, n), rng.uniform(0.27, 14.0, n),
            rng.uniform(136.0, 6000.0, n), rng.uniform(10.0, 800.0, n))
    ]


def central_difference(f, theta, h=1e-6, index=None):
    """Central finite differences of scalar ``f`` w.r.t. the flat array ``theta`` (in place)."""
    flat = theta.reshape(-1)
    index = range(flat.size) if index is None else index
    out = np.zeros(len(index))
    for j, i in enumerate(index):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        out[j] = (up - down) / (2 * h)
    return out


def relative_error(analytic, numeric, floor=1e-8):
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    return float(np.max(np.abs(a - n)) / max(np.max(np.abs(n)), floor))


_CRITERIA: dict = {}


@pytest.fixture
def record_criterion():
    """Record one acceptance line; the summary is printed at the end of the session."""
    def record(number, status, detail=""):
        line = f"criterion {number:>2}: {status:<4} {detail}".rstrip()
        _CRITERIA[number] = line
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("-", "acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])

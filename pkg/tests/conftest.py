import numpy as np
import pytest

from vibecodec.basis import fit_basis, project
from vibecodec.filterbank import band_powers, design_bank
from vibecodec.synthetic import synthetic_corpus

# acceptance results, printed as one line per criterion at the end of the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {status}  {detail}")


@pytest.fixture(scope="session")
def bank():
    return design_bank()


@pytest.fixture(scope="session")
def corpus():
    return synthetic_corpus(18, seed=1)


@pytest.fixture(scope="session")
def corpus_powers(bank, corpus):
    return [band_powers(s, bank, "dB") for s in corpus]


@pytest.fixture(scope="session")
def basis(corpus_powers):
    return fit_basis(corpus_powers, k=3)


@pytest.fixture(scope="session")
def corpus_scores(basis, corpus, corpus_powers):
    return {s.label: project(basis, p) for s, p in zip(corpus, corpus_powers)}


@pytest.fixture(scope="session")
def large_corpus_basis(bank):
    # 50-signal corpus used to set the t1 range for synthesis tests
    sigs = synthetic_corpus(50, seed=3)
    P = [band_powers(s, bank, "dB") for s in sigs]
    b = fit_basis(P, k=3)
    t1 = np.array([project(b, p).t[0] for p in P])
    return b, float(t1.std())

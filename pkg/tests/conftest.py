import contextlib

import pytest
import torch

from ood_intent.corpus import build_vocabulary
from ood_intent.synthetic import emit_synthetic_benchmark

torch.set_num_threads(1)

_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture
def criterion():
    """Record a PASS/FAIL/WAIVED line for the acceptance summary.

    The body may append to the yielded list to add a detail string.
    """

    @contextlib.contextmanager
    def record(name: str):
        details: list[str] = []
        try:
            yield details
        except pytest.skip.Exception as exc:
            _ACCEPTANCE.append((name, "WAIVED", str(exc)))
            raise
        except BaseException as exc:
            _ACCEPTANCE.append((name, "FAIL", f"{type(exc).__name__}: {exc}".splitlines()[0]))
            raise
        _ACCEPTANCE.append((name, "PASS", "; ".join(details)))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{status:<6} {name}" + (f"  ({detail})" if detail else ""))


@pytest.fixture(scope="session")
def small_bundle():
    return emit_synthetic_benchmark(7, n_train=600, n_valid=150, n_test=150, n_ood_valid=60, n_ood_test=60)


@pytest.fixture(scope="session")
def small_vocab(small_bundle):
    return build_vocabulary(small_bundle.train_id)

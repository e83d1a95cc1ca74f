import contextlib

import pytest

_CRITERIA = {}


class _Outcome:
    def __init__(self):
        self.detail = ""


@pytest.fixture
def criterion():
    """Context manager recording one acceptance criterion as PASS or FAIL for the summary."""

    @contextlib.contextmanager
    def record(number, title):
        out = _Outcome()
        try:
            yield out
        except BaseException:
            _CRITERIA[number] = ("FAIL", title, out.detail)
            raise
        _CRITERIA[number] = ("PASS", title, out.detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[n]
        line = f"criterion {n:2d} {status}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))

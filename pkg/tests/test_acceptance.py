"""End-to-end acceptance gate.

Each criterion prints one PASS/FAIL line with its elapsed time and the
measured quantity that decided the verdict.  The same criteria back the
``flowfilt verify`` subcommand.
"""

import pytest

from flowfilt import acceptance

_IDS = [f"C{i}" for i in range(1, len(acceptance.CRITERIA) + 1)]


@pytest.mark.parametrize("criterion", acceptance.CRITERIA, ids=_IDS)
def test_acceptance_criterion(criterion, capsys):
    result = criterion()
    with capsys.disabled():
        print()
        print(acceptance.format_line(result))
    assert result.passed, acceptance.format_line(result)

"""One test per acceptance criterion; the PASS/FAIL lines are repeated in the terminal summary."""
import pytest

from conftest import ACCEPTANCE_LINES

from homoglab.acceptance import CRITERIA, run_criterion


@pytest.mark.parametrize("number", [c[0] for c in CRITERIA], ids=[f"criterion-{c[0]}" for c in CRITERIA])
def test_criterion(number):
    result = run_criterion(number)
    print(result.line())
    ACCEPTANCE_LINES.append(result.line())
    assert result.passed, result.line()

import pytest

from magbm import invariants

FAST = [c for c in invariants.CHECKS if not c.slow]


@pytest.mark.parametrize("check", FAST, ids=[c.name.replace(" ", "_") for c in FAST])
def test_fast_invariant(check):
    result = check.run()
    assert result.passed, result.detail


def test_failing_check_is_reported_not_raised():
    def broken():
        raise ArithmeticError("overflow")

    result = invariants.Check("broken", "demo", broken).run()
    assert not result.passed
    assert "overflow" in result.detail


def test_selection_by_module():
    results = invariants.run_checks(include_slow=False, select="lattice")
    assert results and all(r.module == "lattice" for r in results)

import pytest

from letc.selftest import CHECKS, run_checks


@pytest.mark.parametrize("name", sorted(CHECKS))
def test_check_passes_clean(name):
    (result,) = run_checks([name])
    assert result.passed, result


@pytest.mark.parametrize("name", sorted(CHECKS))
def test_check_detects_fault(name):
    (result,) = run_checks([name], fault=name)
    assert not result.passed


def test_unknown_check():
    with pytest.raises(KeyError):
        run_checks(["nope"])
    with pytest.raises(KeyError):
        run_checks(fault="nope")

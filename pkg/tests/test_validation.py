import pytest

from fdls import glsm, operators, validation


def test_quick_suite_green():
    rep = validation.run_suite("quick")
    assert rep["passed"], [c for c in rep["checks"] if not c["passed"]]


def test_full_suite_contents():
    names = [n for n, _ in validation.FULL]
    assert "oracle_cross_check" in names and "stilde_decay" in names
    assert names[: len(validation.QUICK)] == [n for n, _ in validation.QUICK]


@pytest.mark.slow
def test_full_suite_green():
    rep = validation.run_suite("full")
    assert rep["passed"], [c for c in rep["checks"] if not c["passed"]]


def test_mutation_caught_and_restored():
    orig = operators.sharp
    with validation.mutation("sharp-sign"):
        rep = validation.run_suite("quick")
    assert not rep["passed"]
    failed = {c["name"] for c in rep["checks"] if not c["passed"]}
    assert "sharp_normal_matrix" in failed and "sharp_psd" in failed
    assert operators.sharp is orig and glsm.sharp is orig


def test_unknown_mutation():
    with pytest.raises(ValueError):
        with validation.mutation("bogus"):
            pass

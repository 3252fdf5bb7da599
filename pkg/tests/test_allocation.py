import json
import warnings

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from layershap.allocation import (
    SparsityPlan,
    allocate_ratios,
    normalize_contributions,
    unclamped_ratios,
)
from layershap.errors import InvalidInputError, InvalidParameterError

contribs = st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=40)
rhos = st.floats(0.0, 1.0)
lams = st.floats(0.0, 0.25)


def test_normalize_examples():
    assert normalize_contributions([1, 2, 3], 0.1) == pytest.approx([0.0, 0.1, 0.2], abs=1e-15)
    assert list(normalize_contributions([5, 5, 5], 0.1)) == [0.1, 0.1, 0.1]
    assert list(normalize_contributions([3, 1, 2], 0.0)) == [0.0, 0.0, 0.0]


@pytest.mark.parametrize("bad,exc", [([], InvalidParameterError), ([1.0, float("nan")], InvalidInputError)])
def test_normalize_errors(bad, exc):
    with pytest.raises(exc):
        normalize_contributions(bad, 0.1)


def test_worked_example():
    plan = allocate_ratios([1, 2, 3], 0.5, 0.1)
    assert plan.ratios == pytest.approx([0.6, 0.5, 0.4], abs=1e-15)
    assert not plan.clamped


def test_equal_contributions_uniform():
    assert allocate_ratios([2.0] * 5, 0.37, 0.2).ratios == (0.37,) * 5


def test_lambda_zero_uniform():
    assert allocate_ratios([0.3, -1.0, 7.0], 0.6, 0.0).ratios == (0.6,) * 3


def test_clamping_flagged():
    with pytest.warns(UserWarning):
        plan = allocate_ratios([1, 2, 3], 0.0, 0.1)
    assert plan.clamped
    assert plan.ratios == pytest.approx([0.1, 0.0, 0.0], abs=1e-15)


def test_rho_range():
    with pytest.raises(InvalidParameterError):
        allocate_ratios([1, 2], 1.5)
    with pytest.raises(InvalidParameterError):
        allocate_ratios([1, 2], 0.5, -0.1)


def test_json_round_trip():
    plan = allocate_ratios([1, 2, 3], 0.5, 0.1, source="abc")
    d = json.loads(plan.to_json())
    assert set(d) == {"rho", "lambda", "ratios", "clamped", "source"}
    assert SparsityPlan.from_json(plan.to_json()) == plan
    with pytest.raises(InvalidInputError):
        SparsityPlan.from_json('{"rho": 1}')


@given(contribs, rhos, lams)
def test_mean_preserved_and_bounded(phi, rho, lam):
    raw = unclamped_ratios(phi, rho, lam)
    assert abs(raw.mean() - rho) <= 1e-12
    assert np.all(np.abs(raw - rho) <= 2 * lam + 1e-12)


@given(contribs, rhos, lams)
def test_anti_monotone(phi, rho, lam):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ratios = np.array(allocate_ratios(phi, rho, lam).ratios)
    order = np.argsort(-np.asarray(phi), kind="stable")
    assert np.all(np.diff(ratios[order]) >= 0)


@given(contribs, rhos, lams, st.floats(1e-3, 1e3), st.floats(-100, 100))
def test_scale_and_shift_invariant(phi, rho, lam, c, b):
    phi = np.asarray(phi)
    assume(phi.max() - phi.min() > 1e-3 or phi.max() == phi.min())
    base = unclamped_ratios(phi, rho, lam)
    assert np.allclose(unclamped_ratios(c * phi, rho, lam), base, atol=1e-9, rtol=0)
    assert np.allclose(unclamped_ratios(phi + b, rho, lam), base, atol=1e-9, rtol=0)


@given(contribs, rhos)
def test_lambda_zero_exact(phi, rho):
    assert allocate_ratios(phi, rho, 0.0).ratios == (rho,) * len(phi)

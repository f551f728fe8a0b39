import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import pt_recent_by_definition
from xsincidence.errors import DomainError
from xsincidence.recency import pt_recency_array, pt_recency_indicator, removal_and_addition

CUTOFF = 2.0


def test_no_prior_test_keeps_assay_result():
    assert pt_recency_indicator(True, False) == 1
    assert pt_recency_indicator(False, False) == 0


def test_recent_negative_test_adds_a_recent_case():
    assert pt_recency_indicator(False, True, 0.5, False, CUTOFF) == 1


def test_old_positive_test_removes_a_recent_case():
    assert pt_recency_indicator(True, True, 3.0, True, CUTOFF) == 0


def test_missing_prior_fields_are_rejected():
    with pytest.raises(DomainError):
        pt_recency_indicator(True, True, None, True)
    with pytest.raises(DomainError):
        pt_recency_indicator(True, True, 1.0, None)
    with pytest.raises(DomainError):
        pt_recency_indicator(True, True, -0.1, False)


def test_exhaustive_enumeration_matches_case_definition():
    times = [0.0, 1.0, CUTOFF, 3.0]  # below, at and above the cutoff
    for r, q, t, d in itertools.product([False, True], [False, True], times, [False, True]):
        if not q:
            args = (r, q, None, None)
        else:
            args = (r, q, t, d)
        assert pt_recency_indicator(*args, cutoff=CUTOFF) == pt_recent_by_definition(*args, CUTOFF)


def test_tie_at_cutoff_can_both_add_and_remove():
    assert pt_recency_indicator(False, True, CUTOFF, False, CUTOFF) == 1
    assert pt_recency_indicator(True, True, CUTOFF, True, CUTOFF) == 0


@given(st.lists(st.tuples(st.booleans(), st.booleans(), st.floats(0, 5), st.booleans()),
                min_size=1, max_size=50))
def test_array_form_matches_scalar_form(rows):
    r, q, t, d = (np.array(c) for c in zip(*rows))
    t = np.where(q, t, np.nan)
    got = pt_recency_array(r, q, t, d, CUTOFF)
    want = [pt_recency_indicator(ri, qi, ti if qi else None, di if qi else None, CUTOFF)
            for ri, qi, ti, di in zip(r, q, t, d)]
    np.testing.assert_array_equal(got.astype(int), want)
    removed, added = removal_and_addition(r, q, t, d, CUTOFF)
    np.testing.assert_array_equal(r.astype(int) - removed + added, want)

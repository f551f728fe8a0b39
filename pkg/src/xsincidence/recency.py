"""Recency classification combining an assay result with a prior HIV test."""

import numpy as np

from .errors import DomainError


def pt_recency_indicator(r, q, t=None, delta=None, cutoff=2.0):
    """Classify one HIV-positive person as recent (1) or not (0).

    A RITA-recent result is overturned when the person already tested
    positive at least ``cutoff`` years ago; a non-recent result is overturned
    when the person tested negative within the last ``cutoff`` years.

    Parameters
    ----------
    r : bool
        Assay (RITA) result, True for recent.
    q : bool
        Whether a prior test result is available.
    t : float, optional
        Years since the prior test. Required when ``q`` is True.
    delta : bool, optional
        Prior test result, True for HIV-positive. Required when ``q`` is True.
    cutoff : float
        Recency window in years.

    Returns
    -------
    int
        0 or 1.
    """
    if q:
        if t is None or delta is None:
            raise DomainError("prior test time and result are required when a prior test is available")
        if t < 0:
            raise DomainError(f"prior test time must be nonnegative, got {t}")
    a = bool(q) and t <= cutoff
    b = bool(q) and t >= cutoff
    d = bool(delta) if q else False
    return int(bool(r) * (1 - b * d) + (1 - bool(r)) * a * (1 - d))


def pt_recency_array(r, q, t, delta, cutoff):
    """Vectorised :func:`pt_recency_indicator` for HIV-positive records.

    Entries of ``t`` and ``delta`` where ``q`` is False are ignored (they may
    be NaN or arbitrary).
    """
    r = np.asarray(r, dtype=bool)
    q = np.asarray(q, dtype=bool)
    t = np.asarray(t, dtype=float)
    d = np.asarray(delta, dtype=bool) & q
    with np.errstate(invalid="ignore"):
        a = q & (t <= cutoff)
        b = q & (t >= cutoff)
    return (r & ~(b & d)) | (~r & a & ~d)


def removal_and_addition(r, q, t, delta, cutoff):
    """Return the ``(L, R*)`` indicator arrays.

    ``L`` marks assay-recent people known to be infected for at least
    ``cutoff`` years; ``R*`` marks assay-non-recent people known to be
    infected within ``cutoff`` years.
    """
    r = np.asarray(r, dtype=bool)
    q = np.asarray(q, dtype=bool)
    t = np.asarray(t, dtype=float)
    d = np.asarray(delta, dtype=bool) & q
    with np.errstate(invalid="ignore"):
        removed = r & q & (t >= cutoff) & d
        added = ~r & q & (t <= cutoff) & ~d
    return removed, added

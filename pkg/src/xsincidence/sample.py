"""Cross-sectional survey records and a columnar sample container."""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .recency import pt_recency_array


@dataclass(frozen=True)
class CrossSectionRecord:
    """One person in the cross-sectional survey.

    ``rita_recent`` is present only for HIV-positive people; ``prior_time``
    (years before the survey) and ``prior_result`` (True for positive) are
    present only when ``has_prior`` is True.
    """

    hiv_positive: bool
    rita_recent: bool | None = None
    has_prior: bool = False
    prior_time: float | None = None
    prior_result: bool | None = None

    def __post_init__(self):
        if self.hiv_positive and self.rita_recent is None:
            raise DomainError("an HIV-positive record needs a recency result")
        if not self.hiv_positive:
            if self.rita_recent is not None:
                raise DomainError("an HIV-negative record cannot carry a recency result")
            if self.has_prior or self.prior_time is not None or self.prior_result is not None:
                raise DomainError("prior test fields are only meaningful for HIV-positive records")
        if self.has_prior:
            if self.prior_time is None or self.prior_result is None:
                raise DomainError("a record with a prior test needs its time and result")
            if not self.prior_time >= 0:
                raise DomainError(f"prior test time must be nonnegative, got {self.prior_time}")
        elif self.prior_time is not None or self.prior_result is not None:
            raise DomainError("prior test time/result given without has_prior")


class Sample:
    """Columnar cross-sectional sample.

    Arrays are stored for every person; for HIV-negative people ``recent``,
    ``has_prior`` and ``prior_result`` are False and ``prior_time`` is NaN,
    as are the prior-test fields of positives without a prior test.

    Parameters
    ----------
    hiv_positive, recent, has_prior, prior_result : array_like of bool
    prior_time : array_like of float
    tau : float, optional
        Upper support of the prior test times. Defaults to the largest
        observed time (0 when there is none).
    """

    def __init__(self, hiv_positive, recent, has_prior, prior_time, prior_result, tau=None):
        d = np.asarray(hiv_positive, dtype=bool).reshape(-1)
        r = np.asarray(recent, dtype=bool).reshape(-1)
        q = np.asarray(has_prior, dtype=bool).reshape(-1)
        t = np.asarray(prior_time, dtype=float).reshape(-1)
        delta = np.asarray(prior_result, dtype=bool).reshape(-1)
        n = d.size
        if not (r.size == q.size == t.size == delta.size == n):
            raise DomainError("sample columns differ in length")
        if np.any(r & ~d) or np.any(q & ~d):
            raise DomainError("HIV-negative records cannot carry recency or prior test data")
        if np.any(delta & ~q):
            raise DomainError("prior_result set without a prior test")
        tq = t[q]
        if np.any(np.isnan(tq)) or np.any(tq < 0):
            raise DomainError("prior test times must be present and nonnegative")
        t = np.where(q, t, np.nan)
        observed_max = float(tq.max()) if tq.size else 0.0
        if tau is None:
            tau = observed_max
        elif observed_max > tau:
            raise DomainError(f"prior test time {observed_max} exceeds tau={tau}")
        for arr in (d, r, q, t, delta):
            arr.setflags(write=False)
        self.hiv_positive, self.recent, self.has_prior = d, r, q
        self.prior_time, self.prior_result = t, delta
        self.tau = float(tau)

    @classmethod
    def from_records(cls, records, tau=None):
        records = list(records)
        d = [rec.hiv_positive for rec in records]
        r = [bool(rec.rita_recent) for rec in records]
        q = [rec.has_prior for rec in records]
        t = [np.nan if rec.prior_time is None else rec.prior_time for rec in records]
        delta = [bool(rec.prior_result) for rec in records]
        return cls(d, r, q, t, delta, tau)

    @classmethod
    def from_positives(cls, n_neg, recent, has_prior, prior_time, prior_result, tau=None):
        """Build a sample from positive-only columns plus a count of negatives."""
        recent = np.asarray(recent, dtype=bool)
        n_pos = recent.size
        pad_b = np.zeros(n_neg, dtype=bool)
        return cls(
            np.concatenate([np.ones(n_pos, dtype=bool), pad_b]),
            np.concatenate([recent, pad_b]),
            np.concatenate([np.asarray(has_prior, dtype=bool), pad_b]),
            np.concatenate([np.asarray(prior_time, dtype=float), np.full(n_neg, np.nan)]),
            np.concatenate([np.asarray(prior_result, dtype=bool), pad_b]),
            tau,
        )

    def records(self):
        out = []
        for d, r, q, t, delta in zip(self.hiv_positive, self.recent, self.has_prior,
                                     self.prior_time, self.prior_result):
            if not d:
                out.append(CrossSectionRecord(False))
            elif q:
                out.append(CrossSectionRecord(True, bool(r), True, float(t), bool(delta)))
            else:
                out.append(CrossSectionRecord(True, bool(r)))
        return out

    def __len__(self):
        return self.hiv_positive.size

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (self.tau == other.tau
                and np.array_equal(self.hiv_positive, other.hiv_positive)
                and np.array_equal(self.recent, other.recent)
                and np.array_equal(self.has_prior, other.has_prior)
                and np.array_equal(self.prior_time, other.prior_time, equal_nan=True)
                and np.array_equal(self.prior_result, other.prior_result))

    __hash__ = None

    def __repr__(self):
        return (f"Sample(n={self.n}, n_pos={self.n_pos}, n_rec={self.n_rec}, "
                f"n_prior={int(self.has_prior.sum())}, tau={self.tau})")

    @property
    def n(self):
        return int(self.hiv_positive.size)

    @property
    def n_pos(self):
        return int(self.hiv_positive.sum())

    @property
    def n_neg(self):
        return self.n - self.n_pos

    @property
    def n_rec(self):
        return int(self.recent.sum())

    def positives(self):
        """``(R, Q, T, Delta)`` arrays restricted to HIV-positive records."""
        d = self.hiv_positive
        return self.recent[d], self.has_prior[d], self.prior_time[d], self.prior_result[d]

    def pt_recent(self, cutoff):
        """PT-RITA recency indicators of the positive records."""
        r, q, t, delta = self.positives()
        return pt_recency_array(r, q, t, delta, cutoff)

    def n_rec_pt(self, cutoff):
        return int(self.pt_recent(cutoff).sum())

    def replace_prior(self, has_prior):
        """Copy with prior tests kept only where ``has_prior`` (full-length mask) is True."""
        keep = np.asarray(has_prior, dtype=bool) & self.has_prior
        return Sample(self.hiv_positive, self.recent, keep, np.where(keep, self.prior_time, np.nan),
                      self.prior_result & keep, self.tau)

    def without_prior_tests(self):
        return self.replace_prior(np.zeros(self.n, dtype=bool))

"""Standard and enhanced incidence estimators, confidence intervals and the shadow period.

The standard estimator uses the assay result alone::

    lambda = (N_rec - N_pos beta) / (N_neg (Omega - beta T*))

The enhanced estimator reclassifies positives using a prior HIV test and
corrects the MDRI and FRR terms for the people whose classification the
prior test settles.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import assay
from .errors import DomainError, EstimationError
from .recency import pt_recency_indicator  # noqa: F401  (re-exported)
from .sample import CrossSectionRecord, Sample  # noqa: F401  (re-exported)
from .variance import (
    DeltaMethodResult,  # noqa: F401
    PlugInMoments,  # noqa: F401
    WMoments,  # noqa: F401
    delta_method_variance,
    plug_in_moments,
    standard_moments,
    w_moments,
    wald_variance,
)

METHODS = ("standard", "enhanced")

FLAG_SINGLETON = "dropped_nonrecent_singleton"
FLAG_CLAMPED = "negative_variance_clamped"
FLAG_WALD = "nonpositive_estimate_wald_ci"


@dataclass(frozen=True)
class IncidenceEstimate:
    """Point estimate with variance and confidence interval.

    For point-only results ``variance`` and the interval bounds are NaN.
    """

    lambda_hat: float
    variance: float
    ci_lower: float
    ci_upper: float
    method: str
    level: float = 0.95
    log_variance: float = float("nan")
    dropped_nonrecent_singleton: bool = False
    flags: tuple = ()
    n: int = 0
    n_pos: int = 0
    n_rec: int = 0
    n_rec_pt: int = 0
    details: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def standard_error(self):
        return float(np.sqrt(self.variance))

    def to_dict(self):
        return {
            "method": self.method,
            "lambda": self.lambda_hat,
            "variance": self.variance,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "n": self.n,
            "n_pos": self.n_pos,
            "n_rec": self.n_rec,
            "n_rec_pt": self.n_rec_pt,
            "flags": list(self.flags),
        }


def _check_cutoffs(f, chars):
    if f is not None and abs(f.cutoff - chars.cutoff) > 1e-12:
        raise DomainError(f"curve cutoff {f.cutoff} differs from characteristics cutoff {chars.cutoff}")


def standard_estimate(n_rec, n_pos, n_neg, chars):
    """Standard (assay-only) incidence estimate; may be negative."""
    if n_neg <= 0:
        raise EstimationError("no HIV-negative records", n_neg=n_neg)
    denom = n_neg * (chars.mdri - chars.frr * chars.cutoff)
    if denom == 0:
        raise EstimationError("zero denominator: MDRI equals FRR * T*", mdri=chars.mdri,
                              frr=chars.frr, cutoff=chars.cutoff)
    return (n_rec - n_pos * chars.frr) / denom


def enhanced_terms(sample, f, chars):
    """Numerator and denominator of the enhanced estimator.

    The indicators ``1(T <= T*)`` and ``1(T >= T*)`` are applied literally,
    so a test exactly ``T*`` years ago contributes to both corrections.
    """
    _check_cutoffs(f, chars)
    ts, beta = chars.cutoff, chars.frr
    n_pos, n_neg = sample.n_pos, sample.n_neg
    if n_neg <= 0:
        raise EstimationError("no HIV-negative records", n_neg=n_neg)
    if n_pos == 0:
        raise EstimationError("no HIV-positive records")
    r, q, t, delta = sample.positives()
    n_rec_pt = int(sample.pt_recent(ts).sum())
    with np.errstate(invalid="ignore"):
        a = q & (t <= ts)
        b = q & (t >= ts)
    numerator = n_rec_pt - beta * (n_pos - int(b.sum()))
    residual = float(np.sum(assay.residual_integral(f, t[a]))) if a.any() else 0.0
    gain = residual - beta * (n_pos * ts - float(np.sum(t[b])))
    denominator = n_neg * (chars.mdri + gain / n_pos)
    return numerator, denominator, n_rec_pt


def enhanced_point(sample, f, chars):
    numerator, denominator, _ = enhanced_terms(sample, f, chars)
    if not denominator > 0:
        raise EstimationError("nonpositive enhanced estimator denominator", denominator=denominator)
    return numerator / denominator


def only_recent(sample, cutoff):
    """Drop prior tests taken more than ``cutoff`` years ago."""
    with np.errstate(invalid="ignore"):
        keep = ~(sample.has_prior & (sample.prior_time > cutoff))
    return sample.replace_prior(keep)


def drop_nonrecent_singleton(sample, cutoff):
    """Remove the prior test of a lone person whose test is older than ``cutoff``.

    The B-group variance is undefined for a single person. Returns the
    (possibly modified) sample and whether a test was dropped.
    """
    with np.errstate(invalid="ignore"):
        older = sample.hiv_positive & sample.has_prior & (sample.prior_time > cutoff)
    if int(older.sum()) != 1:
        return sample, False
    return sample.replace_prior(~older), True


def enhanced_estimate(sample, f, chars):
    """Enhanced point estimate (variance and interval left as NaN).

    Raises
    ------
    EstimationError
        If the denominator is not positive; ``details`` carries it.
    """
    numerator, denominator, n_rec_pt = enhanced_terms(sample, f, chars)
    if not denominator > 0:
        raise EstimationError("nonpositive enhanced estimator denominator", denominator=denominator,
                              numerator=numerator)
    nan = float("nan")
    return IncidenceEstimate(numerator / denominator, nan, nan, nan, "enhanced", nan,
                             n=sample.n, n_pos=sample.n_pos, n_rec=sample.n_rec, n_rec_pt=n_rec_pt)


def log_scale_ci(lambda_hat, log_variance, level):
    """``exp(log(lambda) -/+ z sqrt(Var(log lambda)))``."""
    z = norm.ppf(0.5 + level / 2.0)
    half = z * np.sqrt(log_variance)
    return lambda_hat * float(np.exp(-half)), lambda_hat * float(np.exp(half))


def estimate_with_ci(sample, f, chars, level=0.95, method="enhanced"):
    """Point estimate, delta-method variance and confidence interval.

    The interval is symmetric on the log scale. A nonpositive estimate falls
    back to a Wald interval on the incidence scale (flagged). For the
    enhanced method, a single positive with a prior test older than ``T*``
    has that test dropped before estimation (flagged).

    Parameters
    ----------
    sample : Sample
    f : TestRecentFunction
        Fitted curve; only used by the enhanced method.
    chars : RitaCharacteristics
    level : float
        Two-sided confidence level in (0, 1).
    method : {"standard", "enhanced"}
    """
    if not 0 < level < 1:
        raise DomainError(f"level must be in (0, 1), got {level}")
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}")
    flags = []
    dropped = False
    n = sample.n
    if method == "standard":
        lam = standard_estimate(sample.n_rec, sample.n_pos, sample.n_neg, chars)
        m = standard_moments(sample)
        n_rec_pt = sample.n_rec
    else:
        _check_cutoffs(f, chars)
        sample, dropped = drop_nonrecent_singleton(sample, chars.cutoff)
        if dropped:
            flags.append(FLAG_SINGLETON)
        numerator, denominator, n_rec_pt = enhanced_terms(sample, f, chars)
        if not denominator > 0:
            raise EstimationError("nonpositive enhanced estimator denominator", denominator=denominator)
        lam = numerator / denominator
        m = plug_in_moments(sample, f)
    w = w_moments(m, chars, n)
    if lam > 0:
        res = delta_method_variance(w, n, lambda_hat=lam)
        var, log_var = res.variance, res.log_variance
        if res.clamped:
            flags.append(FLAG_CLAMPED)
        lo, hi = log_scale_ci(lam, log_var, level)
    else:
        var, clamped = wald_variance(w, n)
        if clamped:
            flags.append(FLAG_CLAMPED)
        flags.append(FLAG_WALD)
        log_var = float("nan")
        half = norm.ppf(0.5 + level / 2.0) * np.sqrt(var)
        lo, hi = lam - half, lam + half
    return IncidenceEstimate(float(lam), float(var), float(lo), float(hi), method, level, log_var,
                             dropped, tuple(flags), n, sample.n_pos, sample.n_rec, n_rec_pt,
                             details={"moments": m, "w": w})


def shadow_period(f, chars, prior_tests):
    """Mean shadow period of the enhanced estimator in years.

    Under incidence changing linearly in time, the estimator is consistent
    for incidence ``omega*`` years before the survey. The per-record
    u-integrals are evaluated in closed form per record (``int_0^T u du``)
    or by quadrature (``int_0^T u (1 - phi(u)) du``) and then averaged,
    which equals integrating the empirical weight function over ``u``.

    Parameters
    ----------
    f : TestRecentFunction
    chars : RitaCharacteristics
        Supplies the MDRI, FRR and ``T*``.
    prior_tests : sequence of (Q, T) pairs or tuple of arrays ``(Q, T)``
    """
    _check_cutoffs(f, chars)
    q, t = assay._prior_test_arrays(prior_tests)
    tq = t[q]
    if np.any(np.isnan(tq)) or np.any(tq < 0):
        raise DomainError("prior test times must be present and nonnegative when a test is available")
    ts, beta = chars.cutoff, chars.frr
    n = max(q.size, 1)
    a = tq[tq <= ts]
    b = tq[tq >= ts]
    num = assay.weighted_phi_integral(f, ts) - beta * ts ** 2 / 2.0
    den = chars.mdri - beta * ts
    if a.size:
        num += float(np.sum(assay.weighted_residual_integral(f, a))) / n
        den += float(np.sum(assay.residual_integral(f, a))) / n
    if b.size:
        num += beta * float(np.sum(b ** 2)) / 2.0 / n
        den += beta * float(np.sum(b)) / n
    if den == 0:
        raise EstimationError("zero shadow period denominator")
    return num / den

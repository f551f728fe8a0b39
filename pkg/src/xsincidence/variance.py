"""Analytical variance of the incidence estimators.

The enhanced estimator is written as a smooth function of five sums::

    W1 = N_rec^PT - beta_hat * sum(1 - B_i)
    W2 = N_pos
    W3 = Omega_hat - beta_hat * T*
    W4 = sum A_i (T_i - Omega_hat_{T_i})
    W5 = beta_hat * sum B_i T_i

    lambda_hat = W1 / ((N - W2) (W3 + (W4 + W5) / W2))

where ``A_i`` and ``B_i`` flag an available prior test taken at most or at
least ``T*`` years ago. The mean vector and covariance matrix of the ``W``
are evaluated from empirical plug-in moments and propagated to
``log(lambda_hat)`` by the delta method. With no prior tests the same
machinery gives the variance of the standard estimator.
"""

from dataclasses import dataclass, fields

import numpy as np

from . import assay
from .errors import DomainError, EstimationError


@dataclass(frozen=True)
class PlugInMoments:
    """Empirical moments feeding the variance formulas.

    The A-group holds positives with a prior test at most ``T*`` years ago,
    the B-group those with a prior test more than ``T*`` years ago (a test
    exactly ``T*`` years ago counts in the A-group only). Group moments are
    zero when the group is empty; variances use ``n - 1`` and are zero for
    a group of one.
    """

    p: float
    P_rec: float
    P_rec_pt: float
    P_A: float
    P_B: float
    mu_TA: float = 0.0
    sigma2_TA: float = 0.0
    mu_TB: float = 0.0
    sigma2_TB: float = 0.0
    omega_TA: float = 0.0
    sigma2_omega_TA: float = 0.0
    omega_star_TA: float = 0.0
    r_TA: float = 0.0
    r_prime_TA: float = 0.0
    r_star_TA: float = 0.0
    n_A: int = 0
    n_B: int = 0

    def __post_init__(self):
        for name in ("p", "P_rec", "P_rec_pt", "P_A", "P_B"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DomainError(f"{name} must be a probability, got {value}")
        if self.P_A + self.P_B > 1.0 + 1e-12:
            raise DomainError("P_A + P_B exceeds 1")
        for name in ("sigma2_TA", "sigma2_TB", "sigma2_omega_TA"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be nonnegative")

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class WMoments:
    """Mean vector and covariance matrix of ``(W1, ..., W5)``."""

    means: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        means = np.array(self.means, dtype=float).reshape(5)
        cov = np.array(self.covariance, dtype=float).reshape(5, 5)
        if not np.array_equal(cov, cov.T):
            raise DomainError("W covariance must be exactly symmetric")
        means.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariance", cov)


@dataclass(frozen=True)
class DeltaMethodResult:
    """Delta-method variance of ``lambda_hat`` and of ``log(lambda_hat)``."""

    variance: float
    log_variance: float
    clamped: bool = False


def _mean_var(x):
    if x.size == 0:
        return 0.0, 0.0
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1)) if x.size > 1 else 0.0
    return mean, var


def group_masks(q, t, cutoff):
    """A- and B-group masks with ties at ``cutoff`` placed in the A-group."""
    q = np.asarray(q, dtype=bool)
    t = np.asarray(t, dtype=float)
    with np.errstate(invalid="ignore"):
        a = q & (t <= cutoff)
        b = q & (t > cutoff)
    return a, b


def plug_in_moments(sample, f):
    """Empirical plug-in moments of a sample for the fitted curve ``f``.

    The pair moment ``r'`` is exact: with ``G_i`` the integrated gradient of
    the curve up to ``T_i``, ``sum_{i != j} G_i' S G_j`` equals
    ``(sum G)' S (sum G) - sum G_i' S G_i``.
    """
    n_pos = sample.n_pos
    if n_pos == 0:
        raise EstimationError("no HIV-positive records")
    cutoff = f.cutoff
    r, q, t, delta = sample.positives()
    a, b = group_masks(q, t, cutoff)
    n_a, n_b = int(a.sum()), int(b.sum())
    p = n_pos / sample.n
    p_rec = float(r.sum()) / n_pos
    p_rec_pt = float(sample.pt_recent(cutoff).sum()) / n_pos
    out = dict(p=p, P_rec=p_rec, P_rec_pt=p_rec_pt, P_A=n_a / n_pos, P_B=n_b / n_pos,
               n_A=n_a, n_B=n_b)
    out["mu_TB"], out["sigma2_TB"] = _mean_var(t[b])
    if n_a:
        ta = t[a]
        omega_t, grads = assay._integrals(f, ta, gradient=True)
        out["mu_TA"], out["sigma2_TA"] = _mean_var(ta)
        out["omega_TA"], out["sigma2_omega_TA"] = _mean_var(omega_t)
        out["omega_star_TA"] = float(np.mean(ta * omega_t))
        cov = f.coefficient_covariance
        sg = grads @ cov
        diag = np.einsum("ij,ij->i", sg, grads)
        out["r_TA"] = float(np.mean(diag))
        if n_a > 1:
            total = grads.sum(axis=0)
            out["r_prime_TA"] = float((total @ cov @ total - diag.sum()) / (n_a * (n_a - 1)))
        g_star = assay.gradient_integral(f, cutoff)
        out["r_star_TA"] = float(np.mean(sg @ g_star))
    return PlugInMoments(**out)


def standard_moments(sample):
    """Plug-in moments for the standard estimator (prior tests ignored)."""
    n_pos = sample.n_pos
    if n_pos == 0:
        raise EstimationError("no HIV-positive records")
    p_rec = sample.n_rec / n_pos
    return PlugInMoments(p=n_pos / sample.n, P_rec=p_rec, P_rec_pt=p_rec, P_A=0.0, P_B=0.0)


def w_moments(m, chars, N):
    """Mean vector and covariance matrix of ``W1..W5`` from plug-in moments.

    ``lambda (1 - p) / p`` is replaced throughout by
    ``(P_rec - beta) / (Omega - beta T*)``.
    """
    if N < 1:
        raise DomainError("N must be at least 1")
    om, beta, ts = chars.mdri, chars.frr, chars.cutoff
    s2_om, s2_b = chars.mdri_variance, chars.frr_variance
    w3 = om - beta * ts
    if not w3 > 0:
        raise EstimationError("MDRI - FRR * T* must be positive", mdri=om, frr=beta, cutoff=ts)
    p, P_rec, P_pt, PA, PB = m.p, m.P_rec, m.P_rec_pt, m.P_A, m.P_B
    muA, s2A, muB, s2B = m.mu_TA, m.sigma2_TA, m.mu_TB, m.sigma2_TB
    wA, s2w, wstar = m.omega_TA, m.sigma2_omega_TA, m.omega_star_TA
    Np = N * p
    slope = (P_rec - beta) / w3
    gapA = muA - wA

    means = np.array([
        Np * (P_pt - beta * (1.0 - PB)),
        Np,
        w3,
        Np * PA * gapA,
        Np * beta * PB * muB,
    ])

    v = np.zeros((5, 5))
    v[0, 0] = Np * (
        P_pt * (1.0 - P_pt)
        + (1.0 - p) * (P_pt - (1.0 - PB) * beta) ** 2
        + s2_b * (1.0 - PB) * (1.0 - (1.0 - PB) * p + Np * (1.0 - PB))
        + beta * PB * (beta * (1.0 - PB)
                       - 2.0 * (P_pt - (P_rec - beta) * (1.0 + muB * beta / w3)))
    )
    v[1, 1] = Np * (1.0 - p)
    v[2, 2] = s2_om + s2_b * ts ** 2
    v[3, 3] = Np * PA * (
        s2A + s2w + muA ** 2 + wA ** 2 - p * PA * gapA ** 2
        + m.r_TA + PA * m.r_prime_TA * (Np - p) - 2.0 * wstar
    )
    v[4, 4] = Np * PB * (
        s2_b * muB ** 2 * PB * Np + (s2_b + beta ** 2) * (s2B + muB ** 2 * (1.0 - PB * p))
    )
    v[0, 1] = Np * (1.0 - p) * (P_pt - (1.0 - PB) * beta)
    v[0, 2] = Np * ts * s2_b * (1.0 - PB)
    v[0, 3] = Np * PA * (
        gapA * (P_rec - p * P_pt - beta * (1.0 - p + p * PB))
        + slope * (muA ** 2 + s2A + wA ** 2 + s2w - 2.0 * wstar)
    )
    v[0, 4] = Np * PB * (
        beta * ((P_rec - beta) * (muB + (s2B + muB ** 2) * beta / w3) - p * P_pt * muB)
        + p * (s2_b + beta ** 2) * muB * (1.0 - PB)
        - s2_b * Np * (1.0 - PB) * muB
    )
    v[1, 2] = 0.0
    v[1, 3] = Np * (1.0 - p) * PA * gapA
    v[1, 4] = Np * (1.0 - p) * beta * PB * muB
    v[2, 3] = -Np * PA * m.r_star_TA
    v[2, 4] = -Np * ts * PB * muB * s2_b
    v[3, 4] = -N * p ** 2 * beta * PB * PA * muB * gapA
    iu = np.triu_indices(5, 1)
    v[(iu[1], iu[0])] = v[iu]
    return WMoments(means, v)


def _check_means(means, N):
    ew1, ew2, ew3, ew4, ew5 = means
    if not ew1 > 0:
        raise EstimationError("E W1 must be positive for the log-scale delta method", EW1=float(ew1))
    if not 0 < ew2 < N:
        raise EstimationError("E W2 must lie strictly between 0 and N", EW2=float(ew2), N=N)
    d = (ew4 + ew5) / ew2
    if not ew3 + d > 0:
        raise EstimationError("E W3 + (E W4 + E W5) / E W2 must be positive", value=float(ew3 + d))


def log_lambda_gradient(means, N):
    """Gradient of ``log(lambda)`` with respect to ``(W1, ..., W5)`` at ``means``."""
    ew1, ew2, ew3, ew4, ew5 = (float(x) for x in means)
    d = (ew4 + ew5) / ew2
    denom = ew3 + d
    return np.array([
        1.0 / ew1,
        1.0 / (N - ew2) + d / (ew3 * ew2 + ew4 + ew5),
        -1.0 / denom,
        -1.0 / (ew2 * denom),
        -1.0 / (ew2 * denom),
    ])


def lambda_from_w(means, N):
    """``W1 / ((N - W2) (W3 + (W4 + W5) / W2))``."""
    ew1, ew2, ew3, ew4, ew5 = (float(x) for x in means)
    return ew1 / ((N - ew2) * (ew3 + (ew4 + ew5) / ew2))


def lambda_gradient(means, N):
    """Gradient of ``lambda`` itself; defined for any sign of ``W1``."""
    ew1, ew2, ew3, ew4, ew5 = (float(x) for x in means)
    if not 0 < ew2 < N:
        raise EstimationError("E W2 must lie strictly between 0 and N", EW2=ew2, N=N)
    d = (ew4 + ew5) / ew2
    denom = ew3 + d
    if denom == 0:
        raise EstimationError("zero estimator denominator")
    lam = lambda_from_w(means, N)
    g = np.array([
        0.0,
        1.0 / (N - ew2) + d / (ew3 * ew2 + ew4 + ew5),
        -1.0 / denom,
        -1.0 / (ew2 * denom),
        -1.0 / (ew2 * denom),
    ]) * lam
    g[0] = 1.0 / ((N - ew2) * denom)
    return g


def delta_method_variance(w, N, lambda_hat=None):
    """Delta-method variance of ``lambda_hat``.

    ``Var(log lambda) = g' S g``; ``Var(lambda) = lambda^2 Var(log lambda)``
    with ``lambda`` taken from ``lambda_hat`` when given and otherwise from
    the W means. A negative quadratic form (the plug-in covariance matrix is
    not guaranteed positive semidefinite) is clamped to 0 and flagged.
    """
    _check_means(w.means, N)
    g = log_lambda_gradient(w.means, N)
    log_var = float(g @ w.covariance @ g)
    clamped = log_var < 0
    if clamped:
        log_var = 0.0
    lam = lambda_from_w(w.means, N) if lambda_hat is None else float(lambda_hat)
    return DeltaMethodResult(lam * lam * log_var, log_var, clamped)


def wald_variance(w, N):
    """Delta-method variance of ``lambda`` on its own scale, with a clamp flag."""
    g = lambda_gradient(w.means, N)
    var = float(g @ w.covariance @ g)
    return (0.0, True) if var < 0 else (var, False)

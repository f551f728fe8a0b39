"""Test-recent function of a recency assay and the characteristics derived from it.

The probability of testing recent at infection duration ``u`` (years) is
modelled as a logistic curve in a polynomial of ``log(u)`` below the cutoff
``T*`` and as the constant false-recent rate at and beyond it::

    phi(u) = expit(theta_0 + theta_1 log u + ... + theta_d (log u)^d),  u < T*
    phi(u) = frr_tail,                                                 u >= T*

Durations below ``duration_floor`` are evaluated at the floor.

Integrals of ``phi`` are taken on the log-duration scale with composite
Gauss-Legendre quadrature, which is smooth there even for steep curves.
The coefficient covariance turns into covariances of ``phi`` by the delta
method; because that covariance is bilinear in the gradient, the double
integral of it factorises into integrated gradients.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import quadrature
from .errors import DomainError, EstimationError
from .recency import pt_recency_array
from .rng import as_generator

DAYS_PER_YEAR = 365.25
DEFAULT_FLOOR = 1.0 / DAYS_PER_YEAR


def days(n):
    """Convert days to years."""
    return n / DAYS_PER_YEAR


@dataclass(frozen=True, eq=False)
class TestRecentFunction:
    """Parametric test-recent curve with the covariance of its coefficients.

    ``coefficients`` multiply ``[1, log u, (log u)^2, ...]``; the polynomial
    degree is ``len(coefficients) - 1``.
    """

    __test__ = False  # keep pytest from collecting this class

    coefficients: np.ndarray
    coefficient_covariance: np.ndarray
    frr_tail: float
    cutoff: float = 2.0
    duration_floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        theta = np.array(self.coefficients, dtype=float).reshape(-1)
        k = theta.size
        if k == 0:
            raise DomainError("at least one coefficient is required")
        cov = np.array(self.coefficient_covariance, dtype=float).reshape(k, k)
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-14):
            raise DomainError("coefficient covariance must be symmetric")
        if np.any(np.diag(cov) < 0):
            raise DomainError("coefficient covariance has a negative variance")
        if not 0.0 <= self.frr_tail <= 1.0:
            raise DomainError(f"frr_tail must be a probability, got {self.frr_tail}")
        if not self.cutoff > 0:
            raise DomainError("cutoff must be positive")
        if not self.duration_floor > 0:
            raise DomainError("duration_floor must be positive")
        cov = 0.5 * (cov + cov.T)
        theta.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "coefficients", theta)
        object.__setattr__(self, "coefficient_covariance", cov)
        object.__setattr__(self, "frr_tail", float(self.frr_tail))
        object.__setattr__(self, "cutoff", float(self.cutoff))
        object.__setattr__(self, "duration_floor", float(self.duration_floor))

    @property
    def degree(self):
        return self.coefficients.size - 1

    @classmethod
    def constant(cls, value, cutoff=2.0, frr_tail=0.0, duration_floor=DEFAULT_FLOOR):
        """A curve equal to ``value`` on ``[0, cutoff)`` with no coefficient uncertainty.

        ``value`` of exactly 0 or 1 is approximated by a saturated logit
        (error below 1e-17).
        """
        value = float(value)
        if not 0.0 <= value <= 1.0:
            raise DomainError("value must be a probability")
        if value == 1.0:
            logit = 40.0
        elif value == 0.0:
            logit = -40.0
        else:
            logit = float(np.clip(np.log(value) - np.log1p(-value), -40.0, 40.0))
        return cls(np.array([logit]), np.zeros((1, 1)), frr_tail, cutoff, duration_floor)

    def with_tail(self, frr_tail):
        return TestRecentFunction(self.coefficients, self.coefficient_covariance, frr_tail,
                                  self.cutoff, self.duration_floor)

    def with_covariance(self, covariance):
        return TestRecentFunction(self.coefficients, covariance, self.frr_tail,
                                  self.cutoff, self.duration_floor)

    def __call__(self, u):
        return phi_eval(self, u)

    def to_dict(self):
        return {
            "degree": int(self.degree),
            "coefficients": [float(c) for c in self.coefficients],
            "covariance": [float(c) for c in self.coefficient_covariance.reshape(-1)],
            "frr_tail": self.frr_tail,
            "cutoff": self.cutoff,
            "duration_floor": self.duration_floor,
        }

    @classmethod
    def from_dict(cls, doc):
        k = int(doc["degree"]) + 1
        coefficients = np.asarray(doc["coefficients"], dtype=float)
        covariance = np.asarray(doc["covariance"], dtype=float)
        if coefficients.size != k or covariance.size != k * k:
            raise DomainError("coefficient or covariance length does not match the degree")
        return cls(coefficients, covariance.reshape(k, k), float(doc["frr_tail"]),
                   float(doc["cutoff"]), float(doc.get("duration_floor", DEFAULT_FLOOR)))


@dataclass(frozen=True)
class RitaCharacteristics:
    """External calibration summary of a recency assay (durations in years)."""

    mdri: float
    mdri_variance: float
    frr: float
    frr_variance: float
    cutoff: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.mdri <= self.cutoff:
            raise DomainError(f"mdri must lie in [0, cutoff], got {self.mdri}")
        if not 0.0 <= self.frr <= 1.0:
            raise DomainError(f"frr must be a probability, got {self.frr}")
        if self.mdri_variance < 0 or self.frr_variance < 0:
            raise DomainError("variances must be nonnegative")
        if not self.cutoff > 0:
            raise DomainError("cutoff must be positive")

    @classmethod
    def from_fit(cls, f, frr=None, frr_variance=0.0):
        """Characteristics implied by a fitted curve.

        The MDRI variance is the delta-method variance of the integrated
        curve, ``r(T*, T*)``; the FRR defaults to the curve's tail value.
        """
        frr = f.frr_tail if frr is None else frr
        return cls(mdri(f), max(double_cov_integral(f, f.cutoff, f.cutoff), 0.0),
                   frr, frr_variance, f.cutoff)

    def to_dict(self):
        return {"mdri": self.mdri, "mdri_variance": self.mdri_variance, "frr": self.frr,
                "frr_variance": self.frr_variance, "cutoff": self.cutoff}

    @classmethod
    def from_dict(cls, doc):
        return cls(float(doc["mdri"]), float(doc["mdri_variance"]), float(doc["frr"]),
                   float(doc["frr_variance"]), float(doc["cutoff"]))


@dataclass(frozen=True)
class CalibrationRecord:
    """One assay measurement on a person with known infection duration."""

    duration: float
    recent: bool

    def __post_init__(self):
        if not self.duration > 0:
            raise DomainError(f"calibration duration must be positive, got {self.duration}")


def _basis(s, degree):
    s = np.asarray(s, dtype=float)
    out = np.empty(s.shape + (degree + 1,))
    out[..., 0] = 1.0
    for j in range(1, degree + 1):
        out[..., j] = out[..., j - 1] * s
    return out


def _log_duration(f, u):
    return np.log(np.maximum(u, f.duration_floor))


def phi_eval(f, u):
    """Probability of testing recent at duration ``u`` (scalar or array)."""
    arr = np.asarray(u, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("durations must be nonnegative")
    out = np.where(arr >= f.cutoff, f.frr_tail,
                   expit(_basis(_log_duration(f, arr), f.degree) @ f.coefficients))
    return float(out) if out.ndim == 0 else out


def phi_gradient(f, u):
    """Gradient of ``phi(u)`` with respect to the coefficients, shape ``u.shape + (d+1,)``.

    Zero at and beyond the cutoff, where the curve is the fixed tail value.
    """
    arr = np.asarray(u, dtype=float)
    basis = _basis(_log_duration(f, arr), f.degree)
    p = expit(basis @ f.coefficients)
    g = (p * (1.0 - p))[..., None] * basis
    return np.where((arr < f.cutoff)[..., None], g, 0.0)


def _check_window(f, t, name="t"):
    arr = np.asarray(t, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0) or np.any(arr > f.cutoff):
        raise DomainError(f"{name} must lie in [0, cutoff={f.cutoff}]")
    return arr


def _integrals(f, t, moment=0, gradient=False, panels=quadrature.DEFAULT_PANELS):
    """``int_0^t phi(u) u^moment du`` for ``t`` in ``[0, cutoff]``.

    With ``gradient=True`` also returns ``int_0^t grad phi(u) du``.
    Below the floor the integrand is the constant ``phi(floor)``; above it
    the substitution ``u = exp(s)`` gives a smooth integrand in ``s``.
    """
    t = np.asarray(t, dtype=float)
    eps = f.duration_floor
    k = moment + 1
    lo = np.log(eps)
    hi = np.log(np.maximum(t, eps))
    nodes, weights = quadrature.composite_nodes(np.full(t.shape, lo), hi, panels)
    basis = _basis(nodes, f.degree)
    p = expit(basis @ f.coefficients)
    jac = np.exp(k * nodes)
    p_floor = float(expit(_basis(lo, f.degree) @ f.coefficients))
    head = np.minimum(t, eps)
    value = p_floor * head ** k / k + np.sum(weights * p * jac, axis=-1)
    if not gradient:
        return value
    # gradient integrals only needed for moment 0
    b_floor = _basis(lo, f.degree)
    g_floor = p_floor * (1.0 - p_floor) * b_floor
    g = np.einsum("...n,...nk->...k", weights * p * (1.0 - p) * np.exp(nodes), basis)
    return value, head[..., None] * g_floor + g


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def integrated_phi(f, t, panels=quadrature.DEFAULT_PANELS):
    """``Omega_t = int_0^t phi(u) du`` for ``t`` in ``[0, cutoff]``."""
    return _scalar(_integrals(f, _check_window(f, t), panels=panels))


def mdri(f, panels=quadrature.DEFAULT_PANELS):
    """Mean duration of recent infection, ``int_0^{T*} phi(u) du`` in years."""
    return float(_integrals(f, np.float64(f.cutoff), panels=panels))


def residual_integral(f, t, panels=quadrature.DEFAULT_PANELS):
    """``int_0^t (1 - phi(u)) du`` for ``t`` in ``[0, cutoff]``."""
    t = _check_window(f, t)
    return _scalar(t - _integrals(f, t, panels=panels))


def weighted_residual_integral(f, t, panels=quadrature.DEFAULT_PANELS):
    """``int_0^t u (1 - phi(u)) du`` for ``t`` in ``[0, cutoff]``."""
    t = _check_window(f, t)
    return _scalar(t ** 2 / 2.0 - _integrals(f, t, moment=1, panels=panels))


def weighted_phi_integral(f, t, panels=quadrature.DEFAULT_PANELS):
    """``int_0^t u phi(u) du`` for ``t`` in ``[0, cutoff]``."""
    return _scalar(_integrals(f, _check_window(f, t), moment=1, panels=panels))


def gradient_integral(f, t, panels=quadrature.DEFAULT_PANELS):
    """``int_0^t grad_theta phi(u) du``, shape ``t.shape + (d+1,)``."""
    return _integrals(f, _check_window(f, t), gradient=True, panels=panels)[1]


def phi_cov(f, u, v):
    """Delta-method covariance ``Cov[phi_hat(u), phi_hat(v)]`` for ``u, v`` in ``[0, T*]``."""
    gu = phi_gradient(f, _check_window(f, u, "u"))
    gv = phi_gradient(f, _check_window(f, v, "v"))
    return _scalar(np.einsum("...i,ij,...j->...", gu, f.coefficient_covariance, gv))


def double_cov_integral(f, t_i, t_j, panels=quadrature.DEFAULT_PANELS):
    """``r(t_i, t_j) = int_0^{t_i} int_0^{t_j} rho(u, v) du dv``.

    Applying one Gauss-Legendre rule in each direction to the bilinear form
    ``g(u)' S g(v)`` gives exactly ``G(t_i)' S G(t_j)`` with ``G`` the
    integrated gradient, so the tensor-product rule is evaluated in that
    factorised form.
    """
    gi = gradient_integral(f, t_i, panels)
    gj = gradient_integral(f, t_j, panels)
    return _scalar(np.einsum("...i,ij,...j->...", gi, f.coefficient_covariance, gj))


def fit_phi(records, degree=2, cutoff=2.0, frr_tail=0.0, duration_floor=DEFAULT_FLOOR):
    """Fit the test-recent curve to calibration records by maximum likelihood.

    Only records with ``duration < cutoff`` enter the fit. The returned
    coefficient covariance is the inverse observed information.

    Raises
    ------
    EstimationError
        On too few records, a single outcome class, separated data or a
        failure of the Newton iterations to converge.
    """
    records = list(records)
    durations = np.array([r.duration for r in records], dtype=float)
    recent = np.array([bool(r.recent) for r in records], dtype=bool)
    return fit_phi_arrays(durations, recent, degree, cutoff, frr_tail, duration_floor)


def fit_phi_arrays(durations, recent, degree=2, cutoff=2.0, frr_tail=0.0,
                   duration_floor=DEFAULT_FLOOR, max_iter=100, tol=1e-10):
    """Array form of :func:`fit_phi`."""
    durations = np.asarray(durations, dtype=float)
    y = np.asarray(recent, dtype=float)
    if np.any(durations <= 0):
        raise DomainError("calibration durations must be positive")
    keep = durations < cutoff
    durations, y = durations[keep], y[keep]
    k = degree + 1
    if durations.size < k + 1:
        raise EstimationError(f"need at least {k + 1} records below the cutoff, got {durations.size}",
                              n=int(durations.size))
    n_recent = int(y.sum())
    if n_recent == 0 or n_recent == y.size:
        raise EstimationError("calibration data contain a single outcome class", n_recent=n_recent,
                              n=int(y.size))

    X = _basis(np.log(np.maximum(durations, duration_floor)), degree)

    def loglik(theta):
        eta = X @ theta
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

    ybar = y.mean()
    theta = np.zeros(k)
    theta[0] = np.log(ybar) - np.log1p(-ybar)
    ll = loglik(theta)
    for it in range(1, max_iter + 1):
        eta = X @ theta
        p = expit(eta)
        info = X.T @ (X * (p * (1.0 - p))[:, None])
        score = X.T @ (y - p)
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            raise EstimationError("singular information matrix (separated data?)", iteration=it) from exc
        # step halving keeps the log-likelihood increasing
        for _ in range(30):
            cand = theta + step
            ll_new = loglik(cand)
            if ll_new >= ll - 1e-12:
                break
            step = step / 2.0
        theta, ll = cand, ll_new
        if np.max(np.abs(step)) <= tol * (1.0 + np.max(np.abs(theta))):
            break
    else:
        raise EstimationError("logistic fit did not converge (separated data?)",
                              iterations=max_iter, coefficients=theta.tolist())

    eta = X @ theta
    if np.max(np.abs(eta)) > 35.0:
        raise EstimationError("fitted probabilities saturate at 0 or 1 (separated data)",
                              max_abs_linear_predictor=float(np.max(np.abs(eta))))
    p = expit(eta)
    info = X.T @ (X * (p * (1.0 - p))[:, None])
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("singular information matrix at the optimum") from exc
    return TestRecentFunction(theta, 0.5 * (cov + cov.T), frr_tail, cutoff, duration_floor)


def _prior_test_arrays(prior_tests):
    if (isinstance(prior_tests, tuple) and len(prior_tests) == 2
            and all(isinstance(x, np.ndarray) for x in prior_tests)):
        q = np.asarray(prior_tests[0], dtype=bool)
        t = np.asarray(prior_tests[1], dtype=float)
    else:
        rows = list(prior_tests)
        q = np.array([bool(r[0]) for r in rows], dtype=bool)
        t = np.array([np.nan if r[1] is None else float(r[1]) for r in rows], dtype=float)
    if q.shape != t.shape:
        raise DomainError("availability and time arrays differ in length")
    return q, t


def expected_residual_term(f, q, t):
    """Empirical mean of ``Q 1(T <= T*) int_0^T (1 - phi)``, the MDRI gain."""
    if q.size == 0:
        return 0.0
    tq = t[q]
    if np.any(np.isnan(tq)) or np.any(tq < 0):
        raise DomainError("prior test times must be present and nonnegative when a test is available")
    recent = tq[tq <= f.cutoff]
    if recent.size == 0:
        return 0.0
    return float(np.sum(residual_integral(f, recent)) / q.size)


def pt_mdri(f, prior_tests, tau=None):
    """MDRI of the recency rule that also uses prior test results.

    ``prior_tests`` is a sequence of ``(Q, T)`` pairs (``T`` may be None
    when ``Q`` is false) or a tuple of two numpy arrays ``(Q, T)``. The gain over
    the assay's own MDRI is the empirical mean of
    ``Q 1(T <= T*) int_0^T (1 - phi(u)) du``.
    """
    q, t = _prior_test_arrays(prior_tests)
    if tau is not None and np.any(t[q] > tau):
        raise DomainError(f"prior test times exceed tau={tau}")
    return mdri(f) + expected_residual_term(f, q, t)


def pt_frr_mc(f, duration_sampler, testing_sampler, n_draws, rng_seed):
    """Monte Carlo false-recent rate of the prior-test-augmented rule.

    Parameters
    ----------
    f : TestRecentFunction
        Supplies the assay's false-recent probability ``frr_tail`` and ``T*``.
    duration_sampler : callable
        ``duration_sampler(rng, n)`` returns ``n`` durations, all beyond ``T*``.
    testing_sampler : callable
        ``testing_sampler(u, rng)`` returns arrays ``(Q, T, Delta)`` for the
        durations ``u``.
    n_draws : int
        Number of simulated non-recent infections (at least 1000).
    rng_seed : int or numpy.random.Generator

    Returns
    -------
    (float, float)
        Estimate and its binomial standard error.
    """
    if n_draws < 1000:
        raise DomainError("n_draws must be at least 1000")
    rng = as_generator(rng_seed)
    u = np.asarray(duration_sampler(rng, n_draws), dtype=float)
    if np.any(u <= f.cutoff):
        raise DomainError("duration sampler produced a duration within the recency window")
    r = rng.random(u.size) < f.frr_tail
    q, t, delta = testing_sampler(u, rng)
    recent = pt_recency_array(r, q, t, delta, f.cutoff)
    est = float(np.mean(recent))
    return est, float(np.sqrt(est * (1.0 - est) / u.size))

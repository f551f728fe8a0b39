"""Synthetic cross-sectional surveys and assay calibration data.

Infection durations of the HIV-positive people at the survey follow from
the incidence history. With incidence ``lambda`` over the last ``T*`` years
and ``lambda + rho (u - T*)`` for infections ``u > T*`` years ago, the
duration ``u`` of a random positive satisfies::

    F(u) = ((1 - p) / p) * (lambda u + rho / 2 * max(u - T*, 0)^2)

and is drawn by inverting ``F(u) = 1 - e`` for a uniform ``e``.

Every person ``i`` consumes row ``i`` of a fixed-width block of uniforms,
so a person's data depend only on the seed, the replicate and ``i``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtri
from scipy.stats import gengamma

from . import assay, rng as rngmod
from .assay import CalibrationRecord, TestRecentFunction
from .errors import DomainError
from .sample import Sample

MECHANISMS = ("uniform", "infection_driven", "mixed")

# columns of the per-person uniform block
_COL_POSITIVE, _COL_DURATION, _COL_RECENT = 0, 1, 2
_COL_AVAILABLE, _COL_T1, _COL_DELAY = 3, 4, 5
_COL_JITTER, _COL_NONREPORT, _COL_FLIP = 6, 7, 8
N_COLUMNS = 9


@dataclass(frozen=True)
class EpidemicParams:
    """Incidence and prevalence at the survey.

    ``rho`` is the yearly increase of incidence per year further back in
    time beyond ``cutoff``; ``rho = 0`` gives constant incidence.
    """

    incidence: float = 0.032
    prevalence: float = 0.29
    rho: float = 0.0
    cutoff: float = 2.0
    t_cs: float = 0.0

    def __post_init__(self):
        if not self.incidence > 0:
            raise DomainError("incidence must be positive")
        if not 0.0 < self.prevalence < 1.0:
            raise DomainError("prevalence must lie in (0, 1)")
        if not self.rho >= 0:
            raise DomainError("rho must be nonnegative")
        if not self.cutoff > 0:
            raise DomainError("cutoff must be positive")

    @property
    def odds(self):
        return self.prevalence / (1.0 - self.prevalence)

    @property
    def e_star(self):
        """Uniform threshold below which a duration falls beyond ``T*``."""
        return 1.0 - self.incidence * self.cutoff / self.odds


@dataclass(frozen=True)
class GenGammaDelay:
    """Generalized-gamma delay from infection to an infection-driven test.

    Parameters follow :data:`scipy.stats.gengamma` (shape ``a``, family
    parameter ``c``, ``scale``). The default is illustrative: a gamma law
    with shape 1.5 whose scale makes ``P(E <= U) = 0.51`` for
    ``U ~ Uniform(0, 12.76)``, which reproduces the realized test
    availability of the mixed mechanism at the default epidemic.
    """

    a: float = 1.5
    c: float = 1.0
    scale: float = 4.6567

    def __post_init__(self):
        if not (self.a > 0 and self.c > 0 and self.scale > 0):
            raise DomainError("delay distribution parameters must be positive")

    def ppf(self, v):
        return gengamma.ppf(v, self.a, self.c, scale=self.scale)

    def cdf(self, x):
        return gengamma.cdf(x, self.a, self.c, scale=self.scale)


@dataclass(frozen=True)
class PriorTestingSpec:
    """How prior HIV test results arise.

    ``uniform``: with probability ``q`` a test taken ``T ~ Uniform(a, b)``
    years ago. ``infection_driven``: a baseline test ``T1 ~ Uniform(a', b')``
    received with probability ``q'`` competes with a test ``E`` years after
    infection (``T2 = u - E``); the more recent one already taken is kept.
    ``mixed``: as ``infection_driven`` with the baseline arm defaulting to
    ``(q, a, b)``.
    """

    mechanism: str = "uniform"
    q: float = 0.0
    a: float = 0.0
    b: float = 2.0
    q_prime: float | None = None
    a_prime: float | None = None
    b_prime: float | None = None
    delay: GenGammaDelay = field(default_factory=GenGammaDelay)

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise DomainError(f"unknown prior testing mechanism {self.mechanism!r}")
        q, a, b = self.baseline()
        for prob in (self.q, q):
            if not 0.0 <= prob <= 1.0:
                raise DomainError("availability probabilities must lie in [0, 1]")
        for lo, hi in ((self.a, self.b), (a, b)):
            if not 0.0 <= lo < hi:
                raise DomainError(f"need 0 <= a < b for the uniform test window, got ({lo}, {hi})")

    def baseline(self):
        """``(q, a, b)`` of the uniform baseline arm."""
        if self.mechanism == "uniform":
            return self.q, self.a, self.b
        if self.mechanism == "infection_driven":
            return (0.0 if self.q_prime is None else self.q_prime,
                    self.a if self.a_prime is None else self.a_prime,
                    self.b if self.b_prime is None else self.b_prime)
        return (self.q if self.q_prime is None else self.q_prime,
                self.a if self.a_prime is None else self.a_prime,
                self.b if self.b_prime is None else self.b_prime)

    def tau(self, max_duration=None):
        """Upper bound of the prior test times this mechanism can produce."""
        _, _, b = self.baseline()
        if self.mechanism == "uniform":
            return b
        return max(b, max_duration if max_duration is not None else b)

    def to_dict(self):
        return {"mechanism": self.mechanism, "q": self.q, "a": self.a, "b": self.b,
                "q_prime": self.q_prime, "a_prime": self.a_prime, "b_prime": self.b_prime,
                "delay": {"a": self.delay.a, "c": self.delay.c, "scale": self.delay.scale}}

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        delay = doc.pop("delay", None)
        if delay is not None:
            doc["delay"] = GenGammaDelay(**delay)
        return cls(**doc)


@dataclass(frozen=True)
class RecallBiasSpec:
    """Misreporting of prior tests.

    Applied in order: times jittered by ``N(0, time_jitter_sd)`` and clamped
    at 0; a positive prior result reported as no test with probability
    ``nonreport_positive_prob``; a positive prior result reported as
    negative with probability ``flip_positive_prob``.
    """

    time_jitter_sd: float = 0.0
    nonreport_positive_prob: float = 0.0
    flip_positive_prob: float = 0.0

    def __post_init__(self):
        if not self.time_jitter_sd >= 0:
            raise DomainError("time_jitter_sd must be nonnegative")
        for prob in (self.nonreport_positive_prob, self.flip_positive_prob):
            if not 0.0 <= prob <= 1.0:
                raise DomainError("recall bias probabilities must lie in [0, 1]")

    @property
    def is_null(self):
        return (self.time_jitter_sd == 0 and self.nonreport_positive_prob == 0
                and self.flip_positive_prob == 0)


def solve_ct(params):
    """Positive root of ``(rho/2) c^2 + c (lambda - rho T*) = p / (1 - p)``.

    Uses the cancellation-free form of the quadratic formula.
    """
    k = params.odds
    lin = params.incidence - params.rho * params.cutoff
    half_rho = params.rho / 2.0
    if half_rho == 0.0:
        if not lin > 0:
            raise DomainError("no positive root")
        return k / lin
    disc = lin * lin + 4.0 * half_rho * k
    root = math.sqrt(disc)
    if lin >= 0:
        return 2.0 * k / (lin + root)
    return (root - lin) / (2.0 * half_rho)


def duration_cdf(params, u):
    """Distribution function of the infection duration of a random positive."""
    u = np.asarray(u, dtype=float)
    excess = np.maximum(u - params.cutoff, 0.0)
    val = (params.incidence * u + 0.5 * params.rho * excess ** 2) / params.odds
    return np.clip(val, 0.0, 1.0)


def max_duration(params):
    """Largest duration the sampler can produce (``F(u) = 1``)."""
    return float(_durations(params, np.array([0.0]))[0])


def _durations(params, e):
    lam, k, ts, rho = params.incidence, params.odds, params.cutoff, params.rho
    target = k * (1.0 - e)
    x = target - lam * ts
    # lam*u + rho/2 (u - T*)^2 = target; the rationalised root is stable as rho -> 0
    with np.errstate(invalid="ignore"):
        long = ts + 2.0 * x / (np.sqrt(lam * lam + 2.0 * rho * np.maximum(x, 0.0)) + lam)
    return np.where(x > 0, long, target / lam)


def draw_infection_duration(params, e):
    """Infection duration for the uniform variate ``e`` in (0, 1).

    Above ``e*`` the duration lies within ``T*`` and is linear in ``e``;
    at or below it the quadratic branch applies. Accepts arrays.
    """
    arr = np.asarray(e, dtype=float)
    if np.any(~(arr > 0)) or np.any(~(arr < 1)):
        raise DomainError("e must lie in the open interval (0, 1)")
    if params.e_star <= 0:
        raise DomainError("incidence * T* exceeds the prevalence odds; no valid duration law")
    out = _durations(params, arr)
    return float(out) if out.ndim == 0 else out


def duration_quantile_bisect(params, e, tol=1e-13):
    """Reference inverse of ``F(u) = 1 - e`` by bisection (slow, scalar)."""
    hi = solve_ct(params) + params.cutoff + 1.0
    target = 1.0 - e
    return brentq(lambda u: float(duration_cdf(params, u)) - target if u <= hi else 1.0,
                  0.0, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)


def draw_recency_result(f, u, rng):
    """Assay result(s) ``Bernoulli(phi(u))``; scalar in, bool out."""
    gen = rngmod.as_generator(rng)
    prob = assay.phi_eval(f, u)
    out = gen.random(np.shape(prob)) < prob
    return bool(out) if np.ndim(out) == 0 else out


def _uniform_arm(q, a, b, v_avail, v_time):
    avail = v_avail < q
    t = a + (b - a) * v_time
    return avail, t


def prior_tests_uniform(spec, u, v_avail, v_time):
    """Vectorised uniform mechanism from supplied uniforms."""
    avail, t = _uniform_arm(spec.q, spec.a, spec.b, v_avail, v_time)
    t = np.where(avail, t, np.nan)
    with np.errstate(invalid="ignore"):
        delta = avail & (t <= u)
    return avail, t, delta


def prior_tests_infection_driven(spec, u, v_avail, v_time, v_delay):
    """Vectorised infection-driven (and mixed) mechanism from supplied uniforms."""
    q1, a1, b1 = spec.baseline()
    has1, t1 = _uniform_arm(q1, a1, b1, v_avail, v_time)
    e = spec.delay.ppf(v_delay)
    t2 = u - e
    use1 = ((t1 < t2) | (t2 < 0)) & has1
    t = np.where(use1, t1, t2)
    q = t >= 0
    t = np.where(q, t, np.nan)
    with np.errstate(invalid="ignore"):
        delta = q & (t <= u)
    return q, t, delta


def draw_prior_tests(spec, u, uniforms):
    """Prior-test triples for durations ``u`` from an ``(n, 3)`` block of uniforms."""
    u = np.asarray(u, dtype=float)
    if spec.mechanism == "uniform":
        return prior_tests_uniform(spec, u, uniforms[:, 0], uniforms[:, 1])
    return prior_tests_infection_driven(spec, u, uniforms[:, 0], uniforms[:, 1], uniforms[:, 2])


def _triple(q, t, delta):
    if not q:
        return False, None, None
    return True, float(t), bool(delta)


def draw_prior_test_uniform(spec, u, rng):
    """One ``(Q, T, Delta)`` triple from the uniform mechanism.

    ``T`` and ``Delta`` are None when ``Q`` is False.
    """
    if u < 0:
        raise DomainError("duration must be nonnegative")
    gen = rngmod.as_generator(rng)
    v = gen.random(2)
    q, t, d = prior_tests_uniform(spec, np.array([u]), v[:1], v[1:])
    return _triple(q[0], t[0], d[0])


def draw_prior_test_infection_driven(spec, u, rng):
    """One ``(Q, T, Delta)`` triple from the infection-driven mechanism."""
    if not u > 0:
        raise DomainError("duration must be positive")
    gen = rngmod.as_generator(rng)
    v = rngmod.uniform_block(gen, 1, 3)
    q, t, d = prior_tests_infection_driven(spec, np.array([u]), v[:, 0], v[:, 1], v[:, 2])
    return _triple(q[0], t[0], d[0])


def recall_bias_arrays(q, t, delta, spec, v_jitter, v_nonreport, v_flip):
    """Vectorised recall bias from supplied uniforms."""
    q = np.asarray(q, dtype=bool).copy()
    t = np.asarray(t, dtype=float).copy()
    delta = np.asarray(delta, dtype=bool).copy()
    if spec.time_jitter_sd > 0:
        eps = spec.time_jitter_sd * ndtri(v_jitter)
        t = np.where(q, np.maximum(t + eps, 0.0), t)
    drop = q & delta & (v_nonreport < spec.nonreport_positive_prob)
    q &= ~drop
    t = np.where(q, t, np.nan)
    delta &= q
    flip = delta & (v_flip < spec.flip_positive_prob)
    delta &= ~flip
    return q, t, delta


def apply_recall_bias(triple, spec, rng):
    """Apply recall bias to one ``(Q, T, Delta)`` triple."""
    q, t, d = triple
    if not q:
        return False, None, None
    gen = rngmod.as_generator(rng)
    v = rngmod.uniform_block(gen, 1, 3)
    qq, tt, dd = recall_bias_arrays([True], [t], [bool(d)], spec, v[:, 0], v[:, 1], v[:, 2])
    return _triple(qq[0], tt[0], dd[0])


@dataclass(frozen=True)
class SimulatedSurvey:
    """A simulated sample with the latent durations of its positives."""

    sample: Sample
    durations: np.ndarray


def simulate_survey(n, params, f, testing, bias=None, rng_seed=0, replicate=0):
    """Like :func:`simulate_cross_section`, also returning the latent durations."""
    if n < 1:
        raise DomainError("n must be at least 1")
    if isinstance(rng_seed, np.random.Generator):
        gen = rng_seed
    else:
        gen = rngmod.substream(rng_seed, replicate, rngmod.CROSS_SECTION)
    block = rngmod.uniform_block(gen, n, N_COLUMNS)
    d = block[:, _COL_POSITIVE] < params.prevalence
    pos = block[d]
    u = draw_infection_duration(params, pos[:, _COL_DURATION])
    r = pos[:, _COL_RECENT] < assay.phi_eval(f, u)
    q, t, delta = draw_prior_tests(testing, u, pos[:, _COL_AVAILABLE:_COL_DELAY + 1])
    if bias is not None and not bias.is_null:
        q, t, delta = recall_bias_arrays(q, t, delta, bias, pos[:, _COL_JITTER],
                                         pos[:, _COL_NONREPORT], pos[:, _COL_FLIP])
    n_pos = int(d.sum())
    full = np.zeros(n, dtype=bool)
    recent, has_prior, result = full.copy(), full.copy(), full.copy()
    times = np.full(n, np.nan)
    recent[d], has_prior[d], result[d], times[d] = r, q, delta, t
    tq = times[has_prior]
    tau = testing.tau(max_duration(params))
    if tq.size and tq.max() > tau:
        tau = float(tq.max())  # jitter can push a time past the nominal window
    sample = Sample(d, recent, has_prior, times, result, tau)
    assert sample.n_pos == n_pos
    return SimulatedSurvey(sample, u)


def simulate_cross_section(n, params, f, testing, bias=None, rng_seed=0, replicate=0):
    """Simulate a cross-sectional survey of ``n`` people.

    Parameters
    ----------
    n : int
    params : EpidemicParams
    f : TestRecentFunction
        True test-recent curve.
    testing : PriorTestingSpec
    bias : RecallBiasSpec, optional
    rng_seed : int or numpy.random.Generator
        An integer seed is combined with ``replicate`` into a substream.
    replicate : int

    Returns
    -------
    Sample
    """
    return simulate_survey(n, params, f, testing, bias, rng_seed, replicate).sample


def default_visit_grid(n_visits=40, cutoff=2.0):
    """Equally spaced visit durations at panel mid-points of ``(0, cutoff)``."""
    return cutoff * (np.arange(n_visits) + 0.5) / n_visits


def simulate_calibration_arrays(true_f, n_subjects, visit_grid, rng_seed=0, replicate=0):
    """Array form of :func:`simulate_calibration_dataset`: ``(durations, recent)``."""
    grid = np.asarray(visit_grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise DomainError("visit grid is empty")
    if np.any(grid <= 0) or np.any(grid > true_f.cutoff):
        raise DomainError("visit durations must lie in (0, cutoff]")
    if n_subjects < 1:
        raise DomainError("n_subjects must be at least 1")
    if isinstance(rng_seed, np.random.Generator):
        gen = rng_seed
    else:
        gen = rngmod.substream(rng_seed, replicate, rngmod.CALIBRATION)
    v = gen.random((n_subjects, grid.size))
    recent = v < assay.phi_eval(true_f, grid)
    return np.tile(grid, n_subjects), recent.reshape(-1)


def simulate_calibration_dataset(true_f, n_subjects, visit_grid, rng_seed=0, replicate=0):
    """Calibration records: each subject is tested once at every visit duration."""
    durations, recent = simulate_calibration_arrays(true_f, n_subjects, visit_grid, rng_seed,
                                                    replicate)
    return [CalibrationRecord(float(u), bool(r)) for u, r in zip(durations, recent)]


def true_assay(mdri_days=98.0, slope=-4.0, frr=0.014, cutoff=2.0, curvature=0.0):
    """Logistic-in-log-duration curve with the requested MDRI.

    The intercept is solved so that ``int_0^T* phi = mdri_days / 365.25``;
    the tail beyond ``T*`` is ``frr``. The coefficient covariance is zero.
    """
    target = assay.days(mdri_days)
    if not 0 < target < cutoff:
        raise DomainError("MDRI must lie strictly between 0 and the cutoff")
    k = 3 if curvature else 2

    def build(theta0):
        coef = [theta0, slope] + ([curvature] if curvature else [])
        return TestRecentFunction(np.array(coef), np.zeros((k, k)), frr, cutoff)

    theta0 = brentq(lambda th: assay.mdri(build(th)) - target, -60.0, 60.0, xtol=1e-14)
    return build(theta0)

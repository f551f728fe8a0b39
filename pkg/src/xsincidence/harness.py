"""Replicated simulation studies and brute-force verification oracles.

A replicate draws its own calibration data (refitting the test-recent
curve), its own FRR estimate and its own survey, then applies every
requested estimator to the same survey. All variants therefore share
random numbers, which sharpens comparisons between them.
"""

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.special import ndtri

from . import assay, rng as rngmod, simulate as sim
from .assay import RitaCharacteristics
from .errors import DomainError, EstimationError
from .estimators import estimate_with_ci, only_recent
from .recency import pt_recency_array
from .variance import delta_method_variance, lambda_from_w, WMoments

VARIANTS = ("standard", "enhanced", "enhanced_only_recent")


@dataclass(frozen=True)
class AssayDesign:
    """True assay and the calibration study used to estimate it.

    The true curve is logistic in log duration with slope ``slope`` (and
    optional ``curvature``) and intercept solved for ``mdri_days``. Each
    replicate tests ``n_subjects`` people at ``n_visits`` equally spaced
    durations in ``(0, T*)`` and fits a polynomial of degree ``degree``.
    The FRR estimate is drawn as ``N(frr, frr_sd^2)`` clipped at 0 and
    reported with variance ``frr_sd^2``. ``fixed_phi`` skips calibration
    and uses the true curve with zero coefficient covariance.
    """

    mdri_days: float = 98.0
    slope: float = -4.0
    curvature: float = 0.0
    frr: float = 0.014
    frr_sd: float = 0.0035
    degree: int = 2
    n_subjects: int = 100
    n_visits: int = 40
    fixed_phi: bool = False

    def true_curve(self, cutoff):
        return sim.true_assay(self.mdri_days, self.slope, self.frr, cutoff, self.curvature)


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to run one simulation study."""

    name: str = "scenario"
    sample_size: int = 5000
    replicates: int = 1000
    epidemic: sim.EpidemicParams = field(default_factory=sim.EpidemicParams)
    assay: AssayDesign = field(default_factory=AssayDesign)
    prior_testing: sim.PriorTestingSpec = field(default_factory=sim.PriorTestingSpec)
    recall_bias: sim.RecallBiasSpec | None = None
    variants: tuple = ("standard", "enhanced")
    level: float = 0.95
    seed: int = 20240601

    def __post_init__(self):
        if self.sample_size < 1:
            raise DomainError("sample_size must be at least 1")
        if self.replicates < 1:
            raise DomainError("replicates must be at least 1")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad or not self.variants:
            raise DomainError(f"unknown or missing estimator variants: {bad}")
        if not 0 < self.level < 1:
            raise DomainError("level must lie in (0, 1)")
        object.__setattr__(self, "variants", tuple(self.variants))

    def to_dict(self):
        return {
            "name": self.name,
            "sample_size": self.sample_size,
            "replicates": self.replicates,
            "epidemic": asdict(self.epidemic),
            "assay_truth": asdict(self.assay),
            "prior_testing": self.prior_testing.to_dict(),
            "recall_bias": None if self.recall_bias is None else asdict(self.recall_bias),
            "variants": list(self.variants),
            "level": self.level,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc):
        known = {"name", "sample_size", "replicates", "epidemic", "assay_truth", "prior_testing",
                 "recall_bias", "variants", "level", "seed"}
        unknown = set(doc) - known
        if unknown:
            raise DomainError(f"unknown scenario sections: {sorted(unknown)}")
        if "seed" not in doc:
            raise DomainError("scenario needs a seed")
        bias = doc.get("recall_bias")
        try:
            kwargs = dict(
                epidemic=sim.EpidemicParams(**doc.get("epidemic", {})),
                assay=AssayDesign(**doc.get("assay_truth", {})),
                prior_testing=sim.PriorTestingSpec.from_dict(doc.get("prior_testing", {})),
                recall_bias=None if bias is None else sim.RecallBiasSpec(**bias),
                seed=int(doc["seed"]),
            )
            for key in ("name", "sample_size", "replicates", "level"):
                if key in doc:
                    kwargs[key] = doc[key]
            if "variants" in doc:
                kwargs["variants"] = tuple(doc["variants"])
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise DomainError(f"invalid scenario: {exc}") from exc


@dataclass(frozen=True)
class ReplicateResult:
    """Outcome of one estimator variant in one replicate."""

    replicate: int
    variant: str
    ok: bool
    lambda_hat: float = float("nan")
    variance: float = float("nan")
    ci_lower: float = float("nan")
    ci_upper: float = float("nan")
    q_star: float = float("nan")
    flags: tuple = ()
    error: str = ""


@dataclass(frozen=True)
class MetricsRow:
    scenario: str
    estimator: str
    replicates: int
    failures: int
    bias: float
    se: float
    see: float
    mse: float
    coverage: float
    pct_mse_reduction: float
    q_star: float
    flags: tuple = ()


COLUMNS = ("scenario", "estimator", "replicates", "failures", "bias", "se", "see", "mse",
           "coverage", "pct_mse_reduction", "q_star", "flags")


@dataclass
class MetricsTable:
    """Per-estimator summary of a simulation study."""

    rows: list
    truth: float = float("nan")
    replicate_results: list = field(default_factory=list, repr=False)

    def row(self, estimator, scenario=None):
        for r in self.rows:
            if r.estimator == estimator and (scenario is None or r.scenario == scenario):
                return r
        raise KeyError(estimator)

    def extend(self, other):
        self.rows.extend(other.rows)
        return self

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in self.rows:
            writer.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_json(self, path=None):
        doc = {"truth": self.truth,
               "rows": [{c: (list(getattr(r, c)) if c == "flags" else getattr(r, c)) for c in COLUMNS}
                        for r in self.rows]}
        text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _fmt(value):
    if isinstance(value, tuple):
        return ";".join(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def mse_reduction(standard_mse, enhanced_mse):
    """Percentage reduction in MSE of an estimator relative to the standard one."""
    if not standard_mse > 0:
        raise DomainError("standard MSE must be positive")
    return 100.0 * (1.0 - enhanced_mse / standard_mse)


def _calibrate(config, replicate, true_f):
    design = config.assay
    cutoff = config.epidemic.cutoff
    frr_gen = rngmod.substream(config.seed, replicate, rngmod.FRR)
    z = float(ndtri(rngmod.uniform_block(frr_gen, 1, 1)[0, 0]))
    beta_hat = min(max(design.frr + design.frr_sd * z, 0.0), 1.0)
    if design.fixed_phi:
        f = true_f.with_tail(beta_hat)
        chars = RitaCharacteristics(assay.mdri(f), 0.0, beta_hat, design.frr_sd ** 2, cutoff)
        return f, chars
    grid = sim.default_visit_grid(design.n_visits, cutoff)
    durations, recent = sim.simulate_calibration_arrays(true_f, design.n_subjects, grid,
                                                        config.seed, replicate)
    f = assay.fit_phi_arrays(durations, recent, design.degree, cutoff, beta_hat)
    chars = RitaCharacteristics(assay.mdri(f), max(assay.double_cov_integral(f, cutoff, cutoff), 0.0),
                                beta_hat, design.frr_sd ** 2, cutoff)
    return f, chars


def run_replicate(config, replicate, true_f=None):
    """Run every estimator variant on one simulated replicate."""
    if true_f is None:
        true_f = config.assay.true_curve(config.epidemic.cutoff)
    try:
        f, chars = _calibrate(config, replicate, true_f)
    except EstimationError as exc:
        return [ReplicateResult(replicate, v, False, error=f"calibration: {exc}") for v in config.variants]
    sample = sim.simulate_cross_section(config.sample_size, config.epidemic, true_f,
                                        config.prior_testing, config.recall_bias, config.seed,
                                        replicate)
    cutoff = config.epidemic.cutoff
    out = []
    for variant in config.variants:
        s = only_recent(sample, cutoff) if variant == "enhanced_only_recent" else sample
        method = "standard" if variant == "standard" else "enhanced"
        n_pos = s.n_pos
        q_star = float(s.has_prior.sum()) / n_pos if n_pos else float("nan")
        if method == "standard":
            q_star = 0.0
        try:
            est = estimate_with_ci(s, f, chars, config.level, method)
        except EstimationError as exc:
            out.append(ReplicateResult(replicate, variant, False, q_star=q_star, error=str(exc)))
            continue
        out.append(ReplicateResult(replicate, variant, True, est.lambda_hat, est.variance,
                                   est.ci_lower, est.ci_upper, q_star, est.flags))
    return out


def _run_chunk(args):
    config, start, stop = args
    true_f = config.assay.true_curve(config.epidemic.cutoff)
    results = []
    for rep in range(start, stop):
        results.extend(run_replicate(config, rep, true_f))
    return results


def summarize(config, results):
    """Aggregate replicate results into a :class:`MetricsTable`."""
    truth = config.epidemic.incidence
    rows = []
    mse_by_variant = {}
    for variant in config.variants:
        rs = sorted((r for r in results if r.variant == variant), key=lambda r: r.replicate)
        good = [r for r in rs if r.ok]
        failures = len(rs) - len(good)
        flags = []
        n = len(good)
        if n == 0:
            rows.append(MetricsRow(config.name, variant, 0, failures, *([float("nan")] * 7),
                                   ("no_successful_replicates",)))
            continue
        lam = np.array([r.lambda_hat for r in good])
        err = lam - truth
        mean = math.fsum(lam) / n
        bias = mean - truth
        if n > 1:
            se = math.sqrt(math.fsum((lam - mean) ** 2) / (n - 1))
        else:
            se = 0.0
            flags.append("se_undefined_single_replicate")
        see = math.fsum(np.sqrt([r.variance for r in good])) / n
        mse = math.fsum(err ** 2) / n
        coverage = 100.0 * sum(1 for r in good if r.ci_lower <= truth <= r.ci_upper) / n
        q_star = math.fsum(r.q_star for r in good) / n
        if failures:
            flags.append(f"failures={failures}")
        clamped = sum(1 for r in good if "negative_variance_clamped" in r.flags)
        if clamped:
            flags.append(f"variance_clamped={clamped}")
        singles = sum(1 for r in good if "dropped_nonrecent_singleton" in r.flags)
        if singles:
            flags.append(f"singleton_dropped={singles}")
        mse_by_variant[variant] = mse
        rows.append(MetricsRow(config.name, variant, n, failures, bias, se, see, mse, coverage,
                               float("nan"), q_star, tuple(flags)))
    if "standard" in mse_by_variant and mse_by_variant["standard"] > 0:
        base = mse_by_variant["standard"]
        rows = [replace(r, pct_mse_reduction=mse_reduction(base, r.mse)) if r.replicates else r
                for r in rows]
    return MetricsTable(rows, truth, list(results))


def run_scenario(config, workers=1, keep_replicates=True):
    """Run a replicated simulation study.

    Parameters
    ----------
    config : ScenarioConfig
    workers : int
        Number of worker processes. Results do not depend on it.
    keep_replicates : bool
        Keep per-replicate results on the returned table.

    Returns
    -------
    MetricsTable
    """
    reps = config.replicates
    if workers <= 1:
        results = _run_chunk((config, 0, reps))
    else:
        bounds = np.linspace(0, reps, workers * 4 + 1).astype(int)
        chunks = [(config, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for chunk in pool.map(_run_chunk, chunks) for r in chunk]
    table = summarize(config, results)
    if not keep_replicates:
        table.replicate_results = []
    return table


def replicate_csv(table, path=None):
    """Per-replicate estimates as CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ("replicate", "variant", "ok", "lambda_hat", "variance", "ci_lower", "ci_upper",
            "q_star", "flags", "error")
    writer.writerow(cols)
    for r in sorted(table.replicate_results, key=lambda r: (r.replicate, r.variant)):
        writer.writerow([_fmt(getattr(r, c)) for c in cols])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def export_plot_data(points, path=None):
    """Write ``(series, x, y)`` triples as CSV for external plotting."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("series", "x", "y"))
    for series, x, y in points:
        writer.writerow((series, _fmt(float(x)), _fmt(float(y))))
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------- oracles


def oracle_variance_mc(config, variant="enhanced", workers=1):
    """Empirical variance of the estimates against the mean analytic variance.

    Returns ``(empirical_var, mean_analytic_var, ratio)`` with ``ratio`` the
    analytic over the empirical variance.
    """
    if config.replicates < 500:
        raise DomainError("need at least 500 replicates")
    if variant not in config.variants:
        config = replace(config, variants=tuple(config.variants) + (variant,))
    table = run_scenario(config, workers)
    good = [r for r in table.replicate_results if r.variant == variant and r.ok]
    lam = np.array([r.lambda_hat for r in good])
    emp = float(np.var(lam, ddof=1))
    ana = math.fsum(r.variance for r in good) / len(good)
    return emp, ana, ana / emp


def w_statistics(sample, f, chars):
    """Realized ``(W1, ..., W5)`` of a sample (prior-test ties at ``T*`` go to the A-group)."""
    cutoff = chars.cutoff
    r, q, t, delta = sample.positives()
    with np.errstate(invalid="ignore"):
        a = q & (t <= cutoff)
        b = q & (t > cutoff)
    n_pt = float(sample.pt_recent(cutoff).sum())
    beta = chars.frr
    w1 = n_pt - beta * float((~b).sum())
    w2 = float(sample.n_pos)
    w3 = chars.mdri - beta * cutoff
    w4 = float(np.sum(assay.residual_integral(f, t[a]))) if a.any() else 0.0
    w5 = beta * float(np.sum(t[b]))
    return np.array([w1, w2, w3, w4, w5])


def oracle_w_direct(config, replicates=5000):
    """Delta method fed with the empirical mean and covariance of simulated W vectors.

    Returns ``(empirical_var, delta_var, ratio)`` where ``empirical_var`` is
    the variance of ``lambda(W)`` across replicates.
    """
    true_f = config.assay.true_curve(config.epidemic.cutoff)
    ws = []
    for rep in range(replicates):
        try:
            f, chars = _calibrate(config, rep, true_f)
        except EstimationError:
            continue
        s = sim.simulate_cross_section(config.sample_size, config.epidemic, true_f,
                                       config.prior_testing, config.recall_bias, config.seed, rep)
        ws.append(w_statistics(s, f, chars))
    ws = np.array(ws)
    n = config.sample_size
    lam = np.array([lambda_from_w(w, n) for w in ws])
    cov = np.cov(ws, rowvar=False)
    cov = 0.5 * (cov + cov.T)
    w = WMoments(ws.mean(axis=0), cov)
    delta = delta_method_variance(w, n).variance
    emp = float(np.var(lam, ddof=1))
    return emp, delta, delta / emp


def testing_sampler(spec):
    """``testing_sampler(u, rng)`` for the configured mechanism."""

    def sampler(u, gen):
        v = rngmod.uniform_block(gen, np.size(u), 3)
        return sim.draw_prior_tests(spec, np.asarray(u, dtype=float), v)

    return sampler


def oracle_pt_mdri_mc(f, testing, n_draws, seed):
    """Grid Monte Carlo MDRI of the prior-test-augmented rule versus the closed form.

    Durations are stratified over ``[0, T*]`` (one draw per cell of an
    ``n_draws`` grid); each gets an assay result and a prior test, and the
    rule's recency rate times ``T*`` estimates the MDRI. The closed form is
    evaluated with the prior-test time law integrated on a midpoint grid.

    Returns
    -------
    dict
        ``mc``, ``mc_se``, ``formula`` and ``diff``.
    """
    if n_draws < 10_000:
        raise DomainError("n_draws must be at least 10^4")
    if testing.mechanism != "uniform":
        raise DomainError("the closed form needs prior tests independent of duration")
    gen = rngmod.substream(seed, 0, rngmod.AUXILIARY)
    cutoff = f.cutoff
    v = rngmod.uniform_block(gen, n_draws, 5)
    u = cutoff * (np.arange(n_draws) + v[:, 0]) / n_draws
    r = v[:, 1] < assay.phi_eval(f, u)
    q, t, delta = sim.draw_prior_tests(testing, u, v[:, 2:5])
    rec = pt_recency_array(r, q, t, delta, cutoff)
    mc = cutoff * float(rec.mean())
    mc_se = cutoff * float(rec.std(ddof=1)) / math.sqrt(n_draws)
    m = 20_000
    grid = testing.a + (testing.b - testing.a) * (np.arange(m) + 0.5) / m
    base = assay.mdri(f)
    full = assay.pt_mdri(f, (np.ones(m, dtype=bool), grid))
    formula = base + testing.q * (full - base)
    return {"mc": mc, "mc_se": mc_se, "formula": formula, "diff": mc - formula}


def oracle_inverse_sampler(params, n_draws=100_000, seed=0, n_shared=10_000):
    """Check the closed-form duration sampler against bisection and a KS test.

    Returns
    -------
    dict
        ``max_abs_diff`` (closed form vs bisection on shared variates),
        ``ks_statistic`` and ``ks_pvalue`` of ``n_draws`` draws against the
        target distribution, ``continuity_gap`` at ``e*`` and ``passed``.
    """
    gen = rngmod.substream(seed, 0, rngmod.AUXILIARY)
    shared = rngmod.uniform_block(gen, n_shared, 1)[:, 0]
    closed = sim.draw_infection_duration(params, shared)
    bisect = np.array([sim.duration_quantile_bisect(params, e) for e in shared])
    max_diff = float(np.max(np.abs(closed - bisect)))
    draws = sim.draw_infection_duration(params, rngmod.uniform_block(gen, n_draws, 1)[:, 0])
    ks = stats.kstest(draws, lambda x: sim.duration_cdf(params, x))
    e_star = params.e_star
    h = 1e-9
    gap = abs(sim.draw_infection_duration(params, e_star - h)
              - sim.draw_infection_duration(params, e_star + h))
    at_star = abs(sim.draw_infection_duration(params, e_star) - params.cutoff)
    return {
        "max_abs_diff": max_diff,
        "ks_statistic": float(ks.statistic),
        "ks_pvalue": float(ks.pvalue),
        "continuity_gap": float(gap),
        "value_at_e_star_error": float(at_star),
        "passed": bool(max_diff < 1e-8 and ks.statistic < 0.006 and gap < 1e-6),
    }


# ------------------------------------------------------- reference scenarios

RECALL_BIAS_PERTURBATIONS = {
    "no_bias": None,
    "jitter_1m": sim.RecallBiasSpec(time_jitter_sd=1.0 / 12.0),
    "jitter_6m": sim.RecallBiasSpec(time_jitter_sd=0.5),
    "nonreport_10pct": sim.RecallBiasSpec(nonreport_positive_prob=0.1),
    "flip_10pct": sim.RecallBiasSpec(flip_positive_prob=0.1),
}


def reference_scenarios(replicates=1000, seed=20240601, sample_size=5000):
    """Named scenarios covering the simulation study's main comparisons.

    Groups: prior tests in different windows at ``q=0.2``; infection-driven
    testing on top of the uniform base; recall-bias perturbations at
    ``q=0.5``; and piecewise incidence with old prior tests.
    """
    common = dict(replicates=replicates, seed=seed, sample_size=sample_size)
    out = {}
    for a, b in ((0, 2), (0, 4), (2, 4)):
        out[f"window_{a}_{b}_q0.2"] = ScenarioConfig(
            name=f"window_{a}_{b}_q0.2",
            prior_testing=sim.PriorTestingSpec("uniform", q=0.2, a=a, b=b), **common)
    out["base"] = ScenarioConfig(name="base", prior_testing=sim.PriorTestingSpec("uniform", q=0.25, a=0, b=4),
                                 **common)
    out["base_ri"] = ScenarioConfig(name="base_ri", prior_testing=sim.PriorTestingSpec("mixed", q=0.25, a=0, b=4),
                                    **common)
    for key, bias in RECALL_BIAS_PERTURBATIONS.items():
        out[f"recall_{key}"] = ScenarioConfig(
            name=f"recall_{key}", prior_testing=sim.PriorTestingSpec("uniform", q=0.5, a=0, b=4),
            recall_bias=bias, variants=("enhanced",), **common)
    out["piecewise_tau12"] = ScenarioConfig(
        name="piecewise_tau12", epidemic=sim.EpidemicParams(rho=0.0039),
        prior_testing=sim.PriorTestingSpec("uniform", q=0.5, a=0, b=12),
        variants=("standard", "enhanced", "enhanced_only_recent"), **common)
    return out

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from xsincidence import harness, simulate as sim
from xsincidence.errors import DomainError

SMALL = harness.ScenarioConfig(name="small", replicates=12, sample_size=3000, seed=99,
                               prior_testing=sim.PriorTestingSpec("uniform", q=0.4, a=0, b=4),
                               variants=("standard", "enhanced", "enhanced_only_recent"))


def test_mse_reduction_examples():
    assert harness.mse_reduction(1.0, 0.4971) == pytest.approx(50.29, abs=1e-12)
    assert harness.mse_reduction(2.0, 2.0) == 0.0
    assert harness.mse_reduction(1.0, 1.5) == pytest.approx(-50.0)
    with pytest.raises(DomainError):
        harness.mse_reduction(0.0, 1.0)


def test_single_replicate_is_flagged():
    table = harness.run_scenario(replace(SMALL, replicates=1))
    for row in table.rows:
        assert row.se == 0.0
        assert "se_undefined_single_replicate" in row.flags
        assert row.mse == pytest.approx(row.bias ** 2, rel=1e-12)


def test_summary_identities():
    table = harness.run_scenario(SMALL)
    truth = SMALL.epidemic.incidence
    for row in table.rows:
        good = [r for r in table.replicate_results if r.variant == row.estimator and r.ok]
        lam = np.array([r.lambda_hat for r in good])
        n = lam.size
        assert row.replicates == n
        assert row.bias == pytest.approx(lam.mean() - truth, rel=1e-12)
        assert row.se == pytest.approx(lam.std(ddof=1), rel=1e-12)
        assert row.mse == pytest.approx(row.bias ** 2 + row.se ** 2 * (n - 1) / n, rel=1e-10)
        assert row.see == pytest.approx(np.mean([math.sqrt(r.variance) for r in good]), rel=1e-12)
        cover = np.mean([r.ci_lower <= truth <= r.ci_upper for r in good]) * 100
        assert row.coverage == pytest.approx(cover)
    std = table.row("standard")
    assert std.pct_mse_reduction == 0.0 and std.q_star == 0.0
    enh = table.row("enhanced")
    assert enh.pct_mse_reduction == pytest.approx(100 * (1 - enh.mse / std.mse))
    assert 0.3 < enh.q_star < 0.5


def test_results_are_byte_identical_and_worker_independent():
    a = harness.run_scenario(SMALL)
    b = harness.run_scenario(SMALL)
    assert a.to_csv() == b.to_csv()
    assert harness.replicate_csv(a) == harness.replicate_csv(b)
    c = harness.run_scenario(replace(SMALL, replicates=6), workers=2)
    d = harness.run_scenario(replace(SMALL, replicates=6), workers=1)
    assert c.to_csv() == d.to_csv()
    # a replicate does not depend on how many ran before it
    first = harness.run_replicate(SMALL, 5)
    assert [r for r in a.replicate_results if r.replicate == 5] == first


def test_calibration_failures_are_counted():
    config = replace(SMALL, replicates=3, assay=harness.AssayDesign(n_subjects=1, n_visits=3))
    table = harness.run_scenario(config)
    for row in table.rows:
        assert row.replicates == 0 and row.failures == 3
        assert row.flags == ("no_successful_replicates",)
    assert all(r.error.startswith("calibration") for r in table.replicate_results)


def test_perfect_prior_information_is_unbiased():
    """Everyone tested exactly T* ago: the estimate is a count of recent infections."""
    truth = sim.true_assay()
    est = []
    for rep in range(300):
        sv = sim.simulate_survey(5000, sim.EpidemicParams(), truth, sim.PriorTestingSpec(),
                                 rng_seed=7, replicate=rep)
        s = sv.sample
        n_recent = int(np.sum(sv.durations < 2.0))
        # the same count through the recency rule with a test at T* for every positive
        r, _, _, _ = s.positives()
        delta = sv.durations >= 2.0
        from xsincidence.sample import Sample

        pt = Sample.from_positives(s.n_neg, r, np.ones(s.n_pos, bool), np.full(s.n_pos, 2.0), delta)
        assert pt.n_rec_pt(2.0) == n_recent
        est.append(n_recent / (s.n_neg * 2.0))
    est = np.array(est)
    assert abs(est.mean() - 0.032) < 4 * est.std(ddof=1) / math.sqrt(est.size)


def test_pt_mdri_oracle():
    f = sim.true_assay()
    out = harness.oracle_pt_mdri_mc(f, sim.PriorTestingSpec("uniform", q=0.5, a=0, b=4),
                                    200_000, seed=3)
    assert abs(out["diff"]) < 4 * out["mc_se"]
    assert out["formula"] > 0.268  # the prior tests lengthen the window
    with pytest.raises(DomainError):
        harness.oracle_pt_mdri_mc(f, sim.PriorTestingSpec("mixed", q=0.2), 200_000, 3)
    with pytest.raises(DomainError):
        harness.oracle_pt_mdri_mc(f, sim.PriorTestingSpec(q=0.2), 100, 3)


def test_config_round_trip_and_errors():
    config = harness.ScenarioConfig(
        name="rt", sample_size=1234, replicates=7, seed=5,
        epidemic=sim.EpidemicParams(rho=0.002),
        assay=harness.AssayDesign(mdri_days=120, degree=3),
        prior_testing=sim.PriorTestingSpec("mixed", q=0.2, a=0, b=6),
        recall_bias=sim.RecallBiasSpec(flip_positive_prob=0.05),
        variants=("enhanced",), level=0.9)
    doc = json.loads(json.dumps(config.to_dict()))
    assert harness.ScenarioConfig.from_dict(doc) == config
    with pytest.raises(DomainError):
        harness.ScenarioConfig.from_dict({"seed": 1, "extra": {}})
    with pytest.raises(DomainError):
        harness.ScenarioConfig.from_dict({"name": "x"})
    with pytest.raises(DomainError):
        harness.ScenarioConfig.from_dict({"seed": 1, "assay_truth": {"bogus": 1}})
    with pytest.raises(DomainError):
        harness.ScenarioConfig(variants=("magic",))
    with pytest.raises(DomainError):
        harness.ScenarioConfig(replicates=0)


def test_table_serialisation(tmp_path):
    table = harness.run_scenario(replace(SMALL, replicates=3))
    text = table.to_csv(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text() == text
    assert text.splitlines()[0] == ",".join(harness.COLUMNS)
    doc = json.loads(table.to_json())
    assert doc["truth"] == 0.032 and len(doc["rows"]) == 3
    lines = harness.replicate_csv(table).splitlines()
    assert len(lines) == 1 + 3 * 3
    plot = harness.export_plot_data([("enhanced", 0.25, 50.0)])
    assert plot == "series,x,y\nenhanced,0.25,50.0\n"


def test_reference_scenarios_cover_the_study():
    scenarios = harness.reference_scenarios(replicates=10, seed=1)
    assert set(scenarios) >= {"window_0_2_q0.2", "window_0_4_q0.2", "window_2_4_q0.2", "base",
                              "base_ri", "recall_no_bias", "recall_flip_10pct", "piecewise_tau12"}
    assert all(c.seed == 1 and c.replicates == 10 for c in scenarios.values())
    assert scenarios["piecewise_tau12"].epidemic.rho == 0.0039

import csv
import io
import json
import math

import numpy as np
import pytest

from ssl_asymptotics.core import ConfigError
from ssl_asymptotics.estimation import EmConfig
from ssl_asymptotics.experiments import (
    ROW_FIELDS,
    StudyConfig,
    chain_cross_entropy,
    nb_exact_risk,
    nb_outcome_table,
    run_study,
    standard_chain_fixture,
    standard_nb_fixture,
    stream,
)
from ssl_asymptotics.models import ChainModel, NaiveBayesModel, log_observed, predict_batch, sample_from
from ssl_asymptotics.policy import FullSelector, LabelingPolicy, LengthDistribution, PrefixFraction

EM = EmConfig(restarts=1, tolerance=1e-10, max_iterations=2000)


def small_nb():
    return NaiveBayesModel.random(2, 3, np.random.default_rng(5), doc_length=4)


class TestOracles:
    def test_outcome_table_sums_to_one(self):
        docs, p0 = nb_outcome_table(small_nb())
        assert p0.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(docs.sum(axis=1) == 4)

    def test_exact_risk_is_bayes_risk_for_truth(self):
        m = small_nb()
        docs, p0 = nb_outcome_table(m)
        assert nb_exact_risk(m, m) == pytest.approx(1.0 - p0.max(axis=1).sum(), abs=1e-12)

    def test_exact_risk_against_sampled(self):
        m = small_nb()
        other = NaiveBayesModel.random(2, 3, np.random.default_rng(6), doc_length=4)
        test = sample_from(m, 200_000, None, None, np.random.default_rng(7))
        sampled = np.mean(predict_batch(other, test.counts) != test.hidden)
        assert nb_exact_risk(other, m) == pytest.approx(sampled, abs=5e-3)

    def test_cross_entropy_against_sampled(self):
        m = standard_chain_fixture()
        est = ChainModel.random(2, 3, np.random.default_rng(2))
        lengths = LengthDistribution((2, 5), (0.3, 0.7))
        test = sample_from(m, 100_000, None, lengths, np.random.default_rng(3))
        mc = -float(np.mean(log_observed(est, test)))
        assert chain_cross_entropy(est, m, lengths) == pytest.approx(mc, rel=5e-3)

    def test_streams_are_independent_and_reproducible(self):
        a = stream(1, 2, 3).random(5)
        np.testing.assert_array_equal(a, stream(1, 2, 3).random(5))
        assert not np.allclose(a, stream(1, 2, 4).random(5))


class TestConfig:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            StudyConfig("banana", standard_nb_fixture(), ns=(10,), lambdas=(0.5,))

    def test_empty_grid(self):
        with pytest.raises(ConfigError):
            StudyConfig("classification", standard_nb_fixture(), lambdas=(0.5,))

    def test_structured_needs_chain(self):
        with pytest.raises(ConfigError):
            StudyConfig("structured", standard_nb_fixture(), ns=(10,),
                        policies=(("full", LabelingPolicy.of((FullSelector(), 1.0))),))

    def test_r_above_pool(self):
        with pytest.raises(ConfigError):
            StudyConfig("two_stage", standard_nb_fixture(), r_grid=(10, 3000), pool_size=2000)

    def test_bad_holdout(self):
        with pytest.raises(ConfigError):
            StudyConfig("classification", standard_nb_fixture(), ns=(10,), lambdas=(0.5,), holdout="maybe")

    def test_holdout_resolution(self):
        nb = StudyConfig("classification", standard_nb_fixture(), ns=(10,), lambdas=(0.5,))
        assert nb.resolved_holdout() == "exact"
        big = NaiveBayesModel.random(2, 40, np.random.default_rng(0), doc_length=50)
        assert StudyConfig("classification", big, ns=(10,), lambdas=(0.5,)).resolved_holdout() == "sample"


@pytest.fixture(scope="module")
def classification():
    cfg = StudyConfig("classification", standard_nb_fixture(), ns=(50, 200), lambdas=(0.2, 0.8),
                      replicates=3, seed=4, em=EM)
    return cfg, run_study(cfg)


class TestClassification:
    def test_row_count(self, classification):
        cfg, res = classification
        assert len(res.rows) == 4 * 3 * len(cfg.metrics)

    def test_aggregates_recomputable_from_rows(self, classification):
        _, res = classification
        for a in res.aggregates():
            v = np.array([r.value for r in res.rows if r.point == a["point"] and r.metric == a["metric"]])
            assert a["count"] == v.size
            assert a["median"] == pytest.approx(np.median(v), abs=0)
            assert a["mean"] == pytest.approx(v.mean(), rel=1e-15)

    def test_csv_rows(self, classification):
        _, res = classification
        rows = list(csv.DictReader(io.StringIO(res.to_csv())))
        assert tuple(rows[0]) == ROW_FIELDS and len(rows) == len(res.rows)
        assert float(rows[0]["value"]) == res.rows[0].value

    def test_cost_and_asymptotic_columns(self, classification):
        _, res = classification
        for r in res.rows:
            if r.metric == "cost":
                assert r.value == r.lam * r.n
        asym = res.annotations["asymptotic_error"]
        for r in res.rows:
            if r.metric == "log_trace_asym_var":
                assert r.value == pytest.approx(math.log(asym[str(r.point)]), rel=1e-12)

    def test_deterministic(self, classification):
        cfg, res = classification
        again = run_study(cfg)
        assert again.to_csv() == res.to_csv() and again.to_json() == res.to_json()

    def test_threads_do_not_change_results(self, classification):
        cfg, res = classification
        from dataclasses import replace
        assert run_study(replace(cfg, threads=3)).to_csv() == res.to_csv()

    def test_json_summary(self, classification):
        _, res = classification
        d = json.loads(res.to_json())
        assert d["config"]["holdout"] == "exact" and d["row_fields"] == list(ROW_FIELDS)

    def test_fully_labeled_large_n_recovers_truth(self):
        cfg = StudyConfig("classification", standard_nb_fixture(), ns=(200_000,), lambdas=(1.0,),
                          metrics=("mse_trace",), replicates=1, seed=0, em=EM)
        assert run_study(cfg).rows[0].value < 1e-3

    def test_sampled_holdout(self):
        cfg = StudyConfig("classification", standard_nb_fixture(), ns=(100,), lambdas=(0.5,), metrics=("error_rate",),
                          holdout="sample", test_size=500, seed=2, em=EM)
        v = run_study(cfg).rows[0].value
        assert v * 500 == pytest.approx(round(v * 500), abs=1e-9)


class TestRegion:
    def test_interior_point_and_frontier(self):
        cfg = StudyConfig("region", standard_nb_fixture(), ns=(100, 400, 1600), lambdas=(0.1, 0.5, 1.0),
                          replicates=5, seed=7, em=EM)
        res = run_study(cfg)
        ann = res.annotations
        assert len(ann["dominated"]) >= 1
        assert sorted(ann["frontier"] + ann["dominated"]) == list(range(9))
        front = sorted((s["cost"], s["error"]) for s in ann["scatter"] if s["on_frontier"])
        assert all(b[1] <= a[1] for a, b in zip(front, front[1:]))

    def test_single_candidate(self):
        cfg = StudyConfig("region", standard_nb_fixture(), ns=(100,), lambdas=(0.5,), seed=1, em=EM)
        ann = run_study(cfg).annotations
        assert ann["frontier"] == [0] and ann["dominated"] == []


class TestStructured:
    def test_small_run(self):
        full = LabelingPolicy.of((FullSelector(), 1.0))
        half = LabelingPolicy.of((PrefixFraction(0.5), 1.0))
        cfg = StudyConfig("structured", standard_chain_fixture(), ns=(40, 80), lengths=LengthDistribution.fixed(6),
                          policies=(("full", full), ("half", half)), replicates=2, seed=3, em=EM)
        res = run_study(cfg)
        assert len(res.rows) == 4 * 2 * 3
        costs = {(r.policy, r.n): r.value for r in res.rows if r.metric == "cost"}
        assert costs[("full", 40)] == 240 and costs[("half", 80)] == 240
        perp = [r.value for r in res.rows if r.metric == "per_sequence_perplexity"]
        assert all(np.isfinite(perp)) and min(perp) > 1
        assert "cross-entropy" in res.summary()["perplexity_formula"]


@pytest.mark.slow
class TestStructuredPhenomena:
    @staticmethod
    @pytest.fixture(scope="class")
    def study():
        half = LabelingPolicy.of((PrefixFraction(0.5), 1.0))
        policies = (("full", LabelingPolicy.of((FullSelector(), 1.0))),
                    ("all_or_nothing_0.6", LabelingPolicy.all_or_nothing(0.6)), ("prefix_half", half))
        cfg = StudyConfig("structured", standard_chain_fixture(), ns=(100, 400, 1600), policies=policies,
                          lengths=LengthDistribution.fixed(16), replicates=20, seed=3, em=EM)
        res = run_study(cfg)
        med = {}
        for a in res.aggregates():
            med[(a["policy"], a["n"], a["metric"])] = a["median"]
        return med

    def test_full_labels_give_lowest_perplexity(self, study):
        for n in (100, 400, 1600):
            full = study[("full", n, "per_sequence_perplexity")]
            assert full < study[("all_or_nothing_0.6", n, "per_sequence_perplexity")]
            assert full < study[("prefix_half", n, "per_sequence_perplexity")]

    def test_cheaper_policy_can_dominate(self, study):
        # half of every sequence costs less than labeling 60% of sequences and predicts better
        cheap = ("prefix_half", 100)
        dear = ("all_or_nothing_0.6", 100)
        assert study[cheap + ("cost",)] < study[dear + ("cost",)]
        assert study[cheap + ("per_sequence_perplexity",)] < study[dear + ("per_sequence_perplexity",)]


class TestTwoStage:
    def test_smoke(self):
        cfg = StudyConfig("two_stage", standard_nb_fixture(), r_grid=(50, 100, 200), pool_size=300,
                          replicates=1, seed=5, em=EM, variance_samples=20_000)
        res = run_study(cfg)
        assert len(res.rows) == 3
        assert [r.r for r in res.rows] == [50, 100, 200]
        assert all(r.value >= 0 for r in res.rows)
        assert set(res.annotations["quartiles_by_r"]) == {"50", "100", "200"}

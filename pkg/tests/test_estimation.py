import json
import math

import numpy as np
import pytest

from ssl_asymptotics.core import ConfigError, DataError, DocumentSet, SequenceSet
from ssl_asymptotics.estimation import (
    EmConfig,
    align_states,
    closed_form_naive_bayes,
    fit_chain,
    fit_naive_bayes,
    observed_loglik,
    probability_distance,
)
from ssl_asymptotics.models import ChainModel, NaiveBayesModel, nb_log_joint, nb_log_marginal, sample_from
from ssl_asymptotics.policy import LabelingPolicy, LengthDistribution


def assert_ascent(result, tol=1e-9):
    d = np.diff(result.trace)
    assert np.all(d >= -tol), d.min()


@pytest.fixture(scope="module")
def nb_model():
    return NaiveBayesModel.random(2, 5, np.random.default_rng(100), doc_length=20)


class TestEmConfig:
    @pytest.mark.parametrize("kw", [{"tolerance": 0}, {"restarts": 0}, {"smoothing": -1}, {"init": "other"}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            EmConfig(**kw)

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            EmConfig.from_dict({"iterations": 3})


class TestObservedLoglik:
    def test_empty_dataset(self, nb_model):
        empty = DocumentSet(np.zeros((0, 5), int), np.zeros(0, int), 5, 2)
        assert observed_loglik(nb_model, empty) == 0.0

    def test_single_labeled_document(self, nb_model):
        d = DocumentSet(np.array([[3, 0, 1, 0, 16]]), np.array([1]), 5, 2)
        assert observed_loglik(nb_model, d) == pytest.approx(nb_log_joint(nb_model, d[0]), abs=1e-12)

    def test_mixed_pair_hand_computed(self):
        m = NaiveBayesModel(np.array([0.3, 0.7]), np.array([[0.9, 0.1], [0.2, 0.8]]), 1)
        d = DocumentSet(np.array([[1, 0], [1, 0]]), np.array([0, -1]), 2, 2)
        # labeled: log(0.3 * 0.9); unlabeled: log(0.3 * 0.9 + 0.7 * 0.2)
        assert observed_loglik(m, d) == pytest.approx(math.log(0.27) + math.log(0.41), abs=1e-14)
        assert observed_loglik(m, d) == pytest.approx(nb_log_joint(m, d[0]) + nb_log_marginal(m, d[1]))


class TestNaiveBayesFit:
    def test_supervised_equals_closed_form(self, nb_model):
        data = sample_from(nb_model, 800, None, None, np.random.default_rng(1))
        res = fit_naive_bayes(data, EmConfig(smoothing=1e-3, restarts=1))
        ref = closed_form_naive_bayes(data, 1e-3, 20)
        np.testing.assert_allclose(res.model.prior, ref.prior, atol=1e-10)
        np.testing.assert_allclose(res.model.conditional, ref.conditional, atol=1e-10)
        assert_ascent(res)

    def test_closed_form_is_relative_frequency(self, nb_model):
        data = sample_from(nb_model, 300, None, None, np.random.default_rng(2))
        est = closed_form_naive_bayes(data, 0.0, 20)
        y = data.labels
        np.testing.assert_allclose(est.prior, np.bincount(y, minlength=2) / len(y), atol=1e-15)
        for c in range(2):
            tot = data.counts[y == c].sum(axis=0)
            np.testing.assert_allclose(est.conditional[c], tot / tot.sum(), atol=1e-15)

    def test_one_document_per_class(self):
        d = DocumentSet(np.array([[2, 1, 0], [0, 1, 2], [1, 1, 1]]), np.array([0, 1, 2]), 3, 3)
        res = fit_naive_bayes(d, EmConfig(restarts=1))
        np.testing.assert_allclose(res.model.prior, np.full(3, 1 / 3), atol=1e-12)

    def test_all_unlabeled_refused(self, nb_model):
        data = sample_from(nb_model, 50, LabelingPolicy.all_or_nothing(0.0), None, np.random.default_rng(3))
        with pytest.raises(DataError):
            fit_naive_bayes(data)
        res = fit_naive_bayes(data, EmConfig(restarts=2), allow_unlabeled=True)
        assert_ascent(res)

    def test_empty_dataset_refused(self):
        with pytest.raises(DataError):
            fit_naive_bayes(DocumentSet(np.zeros((0, 2), int), np.zeros(0, int), 2, 2))

    def test_semi_supervised_accuracy(self, nb_model):
        data = sample_from(nb_model, 5000, LabelingPolicy.all_or_nothing(0.3), None, np.random.default_rng(4))
        res = fit_naive_bayes(data, EmConfig(restarts=3))
        assert_ascent(res)
        assert probability_distance(res.model, nb_model) < 0.05

    def test_unsmoothed_trace_is_observed_loglik(self, nb_model):
        data = sample_from(nb_model, 400, LabelingPolicy.all_or_nothing(0.2), None, np.random.default_rng(5))
        res = fit_naive_bayes(data, EmConfig(smoothing=0.0, restarts=1, tolerance=1e-12))
        assert_ascent(res)
        assert res.trace[-1] == pytest.approx(observed_loglik(res.model, data), abs=1e-9)
        assert res.log_likelihood == pytest.approx(observed_loglik(res.model, data), abs=1e-9)

    def test_best_restart_selected(self, nb_model):
        data = sample_from(nb_model, 300, LabelingPolicy.all_or_nothing(0.05), None, np.random.default_rng(6))
        res = fit_naive_bayes(data, EmConfig(restarts=4, init="random", seed=3))
        assert len(res.restart_log_likelihoods) == 4
        assert res.log_likelihood == max(res.restart_log_likelihoods)

    def test_json_output(self, nb_model):
        data = sample_from(nb_model, 100, LabelingPolicy.all_or_nothing(0.5), None, np.random.default_rng(7))
        d = json.loads(fit_naive_bayes(data, EmConfig(restarts=1)).to_json())
        assert set(d["probabilities"]) == {"prior", "conditional"}
        assert np.all(np.diff(d["trace"]) >= -1e-9)


class TestChainFit:
    def test_supervised_counts(self):
        m = ChainModel.random(2, 3, np.random.default_rng(0))
        data = sample_from(m, 300, None, LengthDistribution.fixed(5), np.random.default_rng(1))
        res = fit_chain(data, EmConfig(smoothing=0.0, restarts=1))
        init = np.zeros(2)
        trans = np.zeros((2, 2))
        emis = np.zeros((2, 3))
        for x, y in zip(data.tokens, data.labels):
            init[y[0]] += 1
            for a, b in zip(y[:-1], y[1:]):
                trans[a, b] += 1
            for t, s in zip(x, y):
                emis[s, t] += 1
        np.testing.assert_allclose(res.model.initial, init / init.sum(), atol=1e-10)
        np.testing.assert_allclose(res.model.transition, trans / trans.sum(1, keepdims=True), atol=1e-10)
        np.testing.assert_allclose(res.model.emission, emis / emis.sum(1, keepdims=True), atol=1e-10)

    def test_single_state_emissions_are_frequencies(self):
        m = ChainModel(np.array([1.0]), np.array([[1.0]]), np.array([[0.2, 0.5, 0.3]]))
        data = sample_from(m, 200, LabelingPolicy.all_or_nothing(0.0), LengthDistribution.fixed(4), np.random.default_rng(2))
        res = fit_chain(data, EmConfig(smoothing=0.0, restarts=1))
        freq = np.bincount(np.concatenate(data.tokens), minlength=3) / (200 * 4)
        np.testing.assert_allclose(res.model.emission[0], freq, atol=1e-12)

    def test_three_way_policy_recovers_truth(self):
        m = ChainModel.random(2, 3, np.random.default_rng(11), concentration=2.0)
        data = sample_from(m, 4000, LabelingPolicy.full_empty_half(), LengthDistribution.fixed(8), np.random.default_rng(3))
        res = fit_chain(data, EmConfig(restarts=2))
        assert_ascent(res)
        assert probability_distance(align_states(res.model, m), m) < 0.08

    def test_unsmoothed_trace_is_observed_loglik(self):
        m = ChainModel.random(2, 2, np.random.default_rng(4))
        data = sample_from(m, 300, LabelingPolicy.full_empty_half(), LengthDistribution((3, 6), (0.5, 0.5)),
                           np.random.default_rng(5))
        res = fit_chain(data, EmConfig(smoothing=0.0, restarts=1, tolerance=1e-12))
        assert_ascent(res)
        assert res.trace[-1] == pytest.approx(observed_loglik(res.model, data), abs=1e-8)

    def test_wrong_dataset_kind(self):
        d = DocumentSet(np.array([[1, 1]]), np.array([0]), 2, 2)
        with pytest.raises(DataError):
            fit_chain(d)


class TestAlignment:
    def test_recovers_permutation(self):
        m = ChainModel.random(3, 4, np.random.default_rng(9))
        scrambled = m.permuted([2, 0, 1])
        assert probability_distance(align_states(scrambled, m), m) == pytest.approx(0.0, abs=1e-15)

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssl_asymptotics.asymptotics import (
    asymptotic_report,
    identifiability_diagnostic,
    kl_gap,
    make_report,
    sigma_classification,
    sigma_structured,
)
from ssl_asymptotics.core import ConfigError, EnumerationError, ParamVector, SequenceSet
from ssl_asymptotics.models import (
    ChainModel,
    NaiveBayesModel,
    chain_outcomes,
    log_multinomial_coefficient,
    log_observed,
    nb_log_joint_matrix,
    nb_outcomes,
    nb_scores,
    scores,
)
from ssl_asymptotics.policy import (
    EmptySelector,
    ExplicitIndexSet,
    FullSelector,
    LabelingPolicy,
    LengthDistribution,
)

from helpers import rel_frobenius


def expected_neg_hessian(model, score_fn, weights, h=1e-5):
    """-E[d score / d theta] by central differences of the score over enumerated outcomes."""
    x = model.params().values
    r = len(x)
    H = np.zeros((r, r))
    for i in range(r):
        e = np.zeros(r)
        e[i] = h
        up = score_fn(model.with_params(ParamVector(x + e, model.layout)))
        dn = score_fn(model.with_params(ParamVector(x - e, model.layout)))
        H[:, i] = weights @ ((up - dn) / (2 * h))
    return -0.5 * (H + H.T)


def nb_tiny(seed=0, L=1):
    return NaiveBayesModel.random(2, 2, np.random.default_rng(seed), doc_length=L)


class TestClassification:
    def test_full_labels_give_fisher_information(self):
        m = NaiveBayesModel.random(2, 3, np.random.default_rng(3), doc_length=4)
        docs = nb_outcomes(3, 4)
        counts = np.repeat(docs, 2, axis=0)
        labels = np.tile([0, 1], len(docs))
        w = np.exp(nb_log_joint_matrix(m, docs) + log_multinomial_coefficient(docs)[:, None]).reshape(-1)
        fisher = expected_neg_hessian(m, lambda mm: nb_scores(mm, counts, labels), w)
        rep = sigma_classification(m, 1.0, "enumeration")
        np.testing.assert_allclose(rep.sigma, fisher, atol=1e-6)

    def test_unlabeled_part_is_marginal_fisher(self):
        m = NaiveBayesModel.random(2, 3, np.random.default_rng(4), doc_length=3)
        docs = nb_outcomes(3, 3)
        w = np.exp(np.logaddexp.reduce(nb_log_joint_matrix(m, docs), axis=1) + log_multinomial_coefficient(docs))
        fisher = expected_neg_hessian(m, lambda mm: nb_scores(mm, docs, np.full(len(docs), -1)), w)
        np.testing.assert_allclose(sigma_classification(m, 0.0).sigma, fisher, atol=1e-6)

    def test_enumeration_matches_monte_carlo(self):
        m = nb_tiny(1)
        exact = sigma_classification(m, 0.5, "enumeration")
        mc = sigma_classification(m, 0.5, "montecarlo", 100_000, np.random.default_rng(2))
        assert np.all(np.abs(exact.sigma - mc.sigma) <= 3 * mc.standard_errors + 1e-12)

    def test_trace_inverse_non_increasing_in_lambda(self):
        m = NaiveBayesModel.random(2, 5, np.random.default_rng(17), doc_length=20)
        traces = [sigma_classification(m, lam).trace_inverse for lam in np.linspace(0.1, 1.0, 10)]
        assert np.all(np.diff(traces) <= 1e-9)

    def test_linear_in_lambda(self):
        m = NaiveBayesModel.random(3, 3, np.random.default_rng(5), doc_length=3)
        s0 = sigma_classification(m, 0.0).sigma
        s1 = sigma_classification(m, 1.0).sigma
        for lam in (0.2, 0.65):
            np.testing.assert_allclose(sigma_classification(m, lam).sigma, lam * s1 + (1 - lam) * s0, atol=1e-10)

    def test_lambda_out_of_range(self):
        with pytest.raises(ConfigError):
            sigma_classification(nb_tiny(), 1.2)

    def test_enumeration_refused_when_too_large(self):
        m = NaiveBayesModel.random(2, 40, np.random.default_rng(0), doc_length=40)
        with pytest.raises(EnumerationError):
            sigma_classification(m, 0.5, "enumeration")

    def test_single_token_unlabeled_is_singular(self):
        # a single-token document reveals only the mixed term distribution
        rep = sigma_classification(nb_tiny(2), 0.0)
        assert rep.rank_deficient and rep.inverse_sigma is None
        assert rep.trace_inverse == float("inf")
        assert rep.null_directions.shape[1] >= 1

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0, 1))
    def test_symmetric_psd(self, seed, lam):
        m = NaiveBayesModel.random(2, 3, np.random.default_rng(seed), doc_length=3)
        rep = sigma_classification(m, lam)
        np.testing.assert_allclose(rep.sigma, rep.sigma.T, atol=1e-8)
        assert rep.eigenvalues.min() >= -1e-8 * np.abs(rep.eigenvalues).max()
        if rep.inverse_sigma is not None:
            np.testing.assert_allclose(rep.inverse_sigma @ rep.sigma, np.eye(len(rep.sigma)), atol=1e-6)

    def test_json(self):
        d = json.loads(sigma_classification(nb_tiny(1), 0.5).to_json())
        assert d["method"] == "enumeration" and len(d["eigenvalues"]) == 3


class TestStructured:
    def test_full_policy_is_complete_fisher(self):
        m = ChainModel.random(2, 2, np.random.default_rng(7))
        tokens, states = chain_outcomes(2, 2, 3)
        data = SequenceSet(tuple(tokens), tuple(states), 2, 2)
        w = np.exp(log_observed(m, data))
        fisher = expected_neg_hessian(m, lambda mm: scores(mm, data), w)
        rep = sigma_structured(m, LabelingPolicy.of((FullSelector(), 1.0)), LengthDistribution.fixed(3))
        np.testing.assert_allclose(rep.sigma, fisher, atol=1e-6)

    def test_enumeration_matches_monte_carlo(self):
        m = ChainModel.random(2, 2, np.random.default_rng(1))
        lengths = LengthDistribution.fixed(3)
        pol = LabelingPolicy.full_empty_half()
        exact = sigma_structured(m, pol, lengths, "enumeration")
        mc = sigma_structured(m, pol, lengths, "montecarlo", 100_000, np.random.default_rng(1))
        assert np.all(np.abs(exact.sigma - mc.sigma) <= 3 * mc.standard_errors + 1e-12)

    def test_policy_weighting(self):
        m = ChainModel.random(2, 3, np.random.default_rng(2))
        lengths = LengthDistribution((2, 3), (0.4, 0.6))
        full = sigma_structured(m, LabelingPolicy.of((FullSelector(), 1.0)), lengths).sigma
        empty = sigma_structured(m, LabelingPolicy.of((EmptySelector(), 1.0)), lengths).sigma
        mix = sigma_structured(m, LabelingPolicy.all_or_nothing(0.3), lengths).sigma
        np.testing.assert_allclose(mix, 0.3 * full + 0.7 * empty, atol=1e-10)

    def test_length_weighting(self):
        m = ChainModel.random(2, 2, np.random.default_rng(3))
        pol = LabelingPolicy.full_empty_half()
        a = sigma_structured(m, pol, LengthDistribution.fixed(2)).sigma
        b = sigma_structured(m, pol, LengthDistribution.fixed(4)).sigma
        both = sigma_structured(m, pol, LengthDistribution((2, 4), (0.25, 0.75))).sigma
        np.testing.assert_allclose(both, 0.25 * a + 0.75 * b, atol=1e-10)

    def test_empty_policy_near_symmetric_chain(self):
        m = ChainModel(np.array([0.5, 0.5]), np.array([[0.5, 0.5], [0.5, 0.5]]),
                       np.array([[0.5, 0.3, 0.2], [0.5, 0.3, 0.2]]))
        rep = sigma_structured(m, LabelingPolicy.of((EmptySelector(), 1.0)), LengthDistribution.fixed(3))
        assert rep.rank_deficient
        assert rep.inverse_sigma is None

    def test_naive_bayes_dispatch(self):
        m = NaiveBayesModel.random(2, 3, np.random.default_rng(0), doc_length=3)
        a = asymptotic_report(m, LabelingPolicy.all_or_nothing(0.4))
        np.testing.assert_allclose(a.sigma, sigma_classification(m, 0.4).sigma, atol=1e-12)


class TestKlGap:
    def test_zero_at_truth(self):
        m = NaiveBayesModel.random(2, 2, np.random.default_rng(0), doc_length=3)
        assert kl_gap(m, m, LabelingPolicy.all_or_nothing(0.5)) == 0.0

    def test_negative_away_from_truth(self):
        rng = np.random.default_rng(1)
        m = NaiveBayesModel.random(2, 2, rng, doc_length=3)
        for _ in range(10):
            other = NaiveBayesModel.random(2, 2, rng, doc_length=3)
            assert kl_gap(m, other, LabelingPolicy.all_or_nothing(0.5)) < -1e-12

    def test_label_swap_invisible_without_labels(self):
        m = NaiveBayesModel.random(2, 3, np.random.default_rng(2), doc_length=3)
        swapped = m.permuted([1, 0])
        assert kl_gap(m, swapped, LabelingPolicy.all_or_nothing(0.0)) == pytest.approx(0.0, abs=1e-14)
        assert kl_gap(m, swapped, LabelingPolicy.all_or_nothing(0.5)) < -1e-6

    def test_chain_is_weighted_kl(self):
        m = ChainModel.random(2, 2, np.random.default_rng(4))
        other = ChainModel.random(2, 2, np.random.default_rng(5))
        lengths = LengthDistribution.fixed(3)
        assert kl_gap(m, m, LabelingPolicy.full_empty_half(), lengths) == 0.0
        full = kl_gap(m, other, LabelingPolicy.of((FullSelector(), 1.0)), lengths)
        empty = kl_gap(m, other, LabelingPolicy.of((EmptySelector(), 1.0)), lengths)
        assert full <= empty < 0
        mix = kl_gap(m, other, LabelingPolicy.all_or_nothing(0.25), lengths)
        assert mix == pytest.approx(0.25 * full + 0.75 * empty, rel=1e-10)

    def test_family_mismatch(self):
        nb = NaiveBayesModel.random(2, 2, np.random.default_rng(0))
        ch = ChainModel.random(2, 2, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            kl_gap(nb, ch, LabelingPolicy.all_or_nothing(0.5))


class TestIdentifiability:
    def test_full_labels_generic_chain(self):
        m = ChainModel.random(2, 3, np.random.default_rng(8))
        res = identifiability_diagnostic(m, LabelingPolicy.of((FullSelector(), 1.0)), LengthDistribution.fixed(4))
        assert res.status == "identifiable"

    def test_first_position_only_with_tied_emissions(self):
        m = ChainModel(np.array([0.3, 0.7]), np.array([[0.6, 0.4], [0.2, 0.8]]),
                       np.array([[0.5, 0.3, 0.2], [0.5, 0.3, 0.2]]))
        pol = LabelingPolicy.of((ExplicitIndexSet({4: [0]}), 1.0))
        res = identifiability_diagnostic(m, pol, LengthDistribution.fixed(4))
        assert res.status == "locally_non_identifiable"
        # transition logits occupy coordinates 1 and 2 of the layout
        trans = res.null_directions[1:3]
        assert np.linalg.norm(trans) > 0.5

    def test_empty_policy_symmetric_nb(self):
        cond = np.array([[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]])
        m = NaiveBayesModel(np.array([0.5, 0.5]), cond, 4)
        res = identifiability_diagnostic(m, LabelingPolicy.of((EmptySelector(), 1.0)))
        assert res.status == "inconclusive"


class TestMakeReport:
    def test_rank_tolerance(self):
        rep = make_report(np.diag([1.0, 1e-9]), "enumeration")
        assert rep.rank_deficient
        rep = make_report(np.diag([1.0, 1e-7]), "enumeration")
        assert not rep.rank_deficient
        np.testing.assert_allclose(rep.inverse_sigma, np.diag([1.0, 1e7]))

"""Asymptotic covariance of semi-supervised estimators.

The score-variance matrix ``sigma`` is the label-policy weighted variance of
the observed-data score at the generating parameter. The asymptotic
covariance of ``sqrt(n) * (theta_hat - theta0)`` is its inverse, for the
all-or-nothing classification case and for general structured policies
alike. Because the score has mean zero at the generating parameter, variances
are computed as second moments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, EnumerationError
from .models import (
    MAX_ENUMERATION,
    ChainModel,
    Model,
    NaiveBayesModel,
    chain_outcomes,
    chain_pass,
    chain_scores,
    log_multinomial_coefficient,
    nb_log_joint_matrix,
    nb_outcomes,
    nb_scores,
    sample_from,
)
from .policy import LabelingPolicy, LengthDistribution, policy_cost

RANK_TOLERANCE = 1e-8
DEFAULT_MC_SAMPLES = 100_000
_CHUNK = 100_000


@dataclass(frozen=True, eq=False)
class AsymptoticReport:
    sigma: np.ndarray
    inverse_sigma: np.ndarray | None
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    method: str
    rank_deficient: bool
    rank_tolerance: float = RANK_TOLERANCE
    n_samples: int | None = None
    standard_errors: np.ndarray | None = None

    @property
    def trace_inverse(self) -> float:
        return math.inf if self.inverse_sigma is None else float(np.trace(self.inverse_sigma))

    @property
    def log_trace_inverse(self) -> float:
        return math.log(self.trace_inverse) if self.inverse_sigma is not None else math.inf

    @property
    def trace_sigma(self) -> float:
        return float(np.trace(self.sigma))

    @property
    def null_directions(self) -> np.ndarray:
        """Eigenvectors (columns) whose eigenvalue falls below the rank tolerance."""
        top = max(float(self.eigenvalues.max()), 0.0)
        return self.eigenvectors[:, self.eigenvalues <= self.rank_tolerance * top]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "n_samples": self.n_samples,
            "sigma": self.sigma.tolist(),
            "inverse_sigma": None if self.inverse_sigma is None else self.inverse_sigma.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "rank_deficient": self.rank_deficient,
            "rank_tolerance": self.rank_tolerance,
            "trace_sigma": self.trace_sigma,
            "trace_inverse": None if self.inverse_sigma is None else self.trace_inverse,
            "log_trace_inverse": None if self.inverse_sigma is None else self.log_trace_inverse,
            "standard_errors": None if self.standard_errors is None else self.standard_errors.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def make_report(sigma, method, n_samples=None, standard_errors=None, rank_tol=RANK_TOLERANCE):
    """Symmetrize, eigendecompose once, and invert when well conditioned."""
    sigma = 0.5 * (np.asarray(sigma) + np.asarray(sigma).T)
    w, vecs = np.linalg.eigh(sigma)
    top = float(w.max()) if w.size else 0.0
    deficient = top <= 0 or float(w.min()) <= rank_tol * top
    inverse = None if deficient else (vecs / w) @ vecs.T
    return AsymptoticReport(sigma, inverse, w, vecs, method, deficient, rank_tol, n_samples, standard_errors)


class _Moments:
    """Running weighted second moment of per-sample matrices, with standard errors."""

    def __init__(self, r):
        self.first = np.zeros((r, r))
        self.second = np.zeros((r, r))
        self.n = 0

    def add(self, q: np.ndarray):
        self.first += q.sum(axis=0)
        self.second += (q * q).sum(axis=0)
        self.n += q.shape[0]

    def result(self):
        mean = self.first / self.n
        var = np.maximum(self.second / self.n - mean * mean, 0.0)
        return mean, np.sqrt(var / self.n)


def _outer(s: np.ndarray) -> np.ndarray:
    return s[:, :, None] * s[:, None, :]


def _weighted_outer(s: np.ndarray, w: np.ndarray) -> np.ndarray:
    return s.T @ (w[:, None] * s)


def labeled_fraction(policy: LabelingPolicy) -> float:
    """Probability that a length-1 label is revealed."""
    return policy_cost(policy, LengthDistribution.fixed(1))


def _doc_lengths(model: NaiveBayesModel, doc_lengths):
    return doc_lengths or LengthDistribution.fixed(model.doc_length)


def nb_score_moments(model: NaiveBayesModel, doc_lengths: LengthDistribution | None = None, limit=MAX_ENUMERATION):
    """Exact Var(complete-data score) and Var(marginal score) by enumeration."""
    r = model.layout.dim
    c = model.num_classes
    full = np.zeros((r, r))
    marg = np.zeros((r, r))
    for length, q in _doc_lengths(model, doc_lengths).items():
        docs = nb_outcomes(model.vocab_size, length, limit // c)
        logp = nb_log_joint_matrix(model, docs) + log_multinomial_coefficient(docs)[:, None]
        pxy = np.exp(logp)
        for y in range(c):
            s = nb_scores(model, docs, np.full(len(docs), y))
            full += q * _weighted_outer(s, pxy[:, y])
        s = nb_scores(model, docs, np.full(len(docs), -1))
        marg += q * _weighted_outer(s, pxy.sum(axis=1))
    return full, marg


def sigma_classification(
    model: NaiveBayesModel,
    lam: float,
    method: str = "enumeration",
    n_samples: int = DEFAULT_MC_SAMPLES,
    rng: np.random.Generator | None = None,
    doc_lengths: LengthDistribution | None = None,
    rank_tol: float = RANK_TOLERANCE,
) -> AsymptoticReport:
    """lam * Var(complete-data score) + (1 - lam) * Var(marginal score)."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError("labeled fraction must lie in [0, 1]")
    if method == "enumeration":
        full, marg = nb_score_moments(model, doc_lengths)
        return make_report(lam * full + (1.0 - lam) * marg, "enumeration", rank_tol=rank_tol)
    if method != "montecarlo":
        raise ConfigError(f"unknown method {method!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    data = sample_from(model, n_samples, None, doc_lengths, rng)
    mom = _Moments(model.layout.dim)
    for start in range(0, n_samples, _CHUNK):
        sl = slice(start, start + _CHUNK)
        counts = data.counts[sl]
        s1 = nb_scores(model, counts, data.hidden[sl])
        s2 = nb_scores(model, counts, np.full(len(counts), -1))
        mom.add(lam * _outer(s1) + (1.0 - lam) * _outer(s2))
    mean, se = mom.result()
    return make_report(mean, "montecarlo", n_samples, se, rank_tol)


def _masked(states: np.ndarray, positions: np.ndarray) -> np.ndarray:
    labels = np.full(states.shape, -1, dtype=np.int64)
    labels[:, positions] = states[:, positions]
    return labels


def chain_enumeration_size(model: ChainModel, lengths: LengthDistribution) -> int:
    return sum((model.num_states * model.vocab_size) ** m for m, _ in lengths.items())


def sigma_structured(
    model: Model,
    policy: LabelingPolicy,
    lengths: LengthDistribution | None = None,
    method: str = "enumeration",
    n_samples: int = DEFAULT_MC_SAMPLES,
    rng: np.random.Generator | None = None,
    rank_tol: float = RANK_TOLERANCE,
) -> AsymptoticReport:
    """Length- and policy-weighted variance of the policy-observed score.

    For naive Bayes models the policy acts on length-1 labels and this
    reduces to :func:`sigma_classification`; ``lengths`` is then the document
    length distribution.
    """
    if isinstance(model, NaiveBayesModel):
        return sigma_classification(model, labeled_fraction(policy), method, n_samples, rng, lengths, rank_tol)
    if lengths is None:
        raise ConfigError("structured variance needs a length distribution")
    r = model.layout.dim
    if method == "enumeration":
        if chain_enumeration_size(model, lengths) > MAX_ENUMERATION:
            raise EnumerationError("chain outcome space too large to enumerate")
        total = np.zeros((r, r))
        for m, q in lengths.items():
            tokens, states = chain_outcomes(model.num_states, model.vocab_size, m)
            for start in range(0, len(tokens), _CHUNK):
                tok, st = tokens[start : start + _CHUNK], states[start : start + _CHUNK]
                w = np.exp(chain_pass(model, tok, st, posteriors=False))
                for pos, p in policy.subsets(m):
                    total += q * p * _weighted_outer(chain_scores(model, tok, _masked(st, pos)), w)
        return make_report(total, "enumeration", rank_tol=rank_tol)
    if method != "montecarlo":
        raise ConfigError(f"unknown method {method!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    data = sample_from(model, n_samples, None, lengths, rng)
    mom = _Moments(r)
    seq_len = data.lengths
    for m in np.unique(seq_len):
        idx = np.flatnonzero(seq_len == m)
        tokens = np.stack([data.tokens[i] for i in idx])
        states = np.stack([data.hidden[i] for i in idx])
        for start in range(0, len(idx), _CHUNK):
            tok, st = tokens[start : start + _CHUNK], states[start : start + _CHUNK]
            q = np.zeros((len(tok), r, r))
            # average over policy components per sample (conditional expectation given x, y)
            for pos, p in policy.subsets(int(m)):
                q += p * _outer(chain_scores(model, tok, _masked(st, pos)))
            mom.add(q)
    mean, se = mom.result()
    return make_report(mean, "montecarlo", n_samples, se, rank_tol)


def asymptotic_report(model, policy, lengths=None, method="auto", n_samples=DEFAULT_MC_SAMPLES, rng=None):
    """Enumeration when the outcome space allows it, Monte Carlo otherwise."""
    if method == "auto":
        method = "enumeration" if enumerable(model, lengths) else "montecarlo"
    return sigma_structured(model, policy, lengths, method, n_samples, rng)


def enumerable(model: Model, lengths=None) -> bool:
    if isinstance(model, NaiveBayesModel):
        lens = _doc_lengths(model, lengths)
        size = sum(
            math.comb(m + model.vocab_size - 1, model.vocab_size - 1) * model.num_classes
            for m, _ in lens.items()
        )
        return size <= MAX_ENUMERATION
    return lengths is not None and chain_enumeration_size(model, lengths) <= MAX_ENUMERATION


# ---------------------------------------------------------------------------
# KL gap and identifiability
# ---------------------------------------------------------------------------


def kl_gap(
    truth: Model,
    model: Model,
    policy: LabelingPolicy,
    lengths: LengthDistribution | None = None,
) -> float:
    """Limit of the centred average log-likelihood: minus the policy-weighted KL gap.

    Equals ``-sum_j lam_j E_q KL(p_truth(observed) || p_model(observed))``;
    zero at the truth and negative wherever the policy-observed
    distributions differ.
    """
    if type(truth) is not type(model):
        raise ConfigError("both models must belong to the same family")
    if not enumerable(truth, lengths):
        raise EnumerationError("outcome space too large for an exact KL gap")
    if isinstance(truth, NaiveBayesModel):
        lam = labeled_fraction(policy)
        gap_full = gap_marg = 0.0
        for length, q in _doc_lengths(truth, lengths).items():
            docs = nb_outcomes(truth.vocab_size, length)
            coef = log_multinomial_coefficient(docs)[:, None]
            lp0 = nb_log_joint_matrix(truth, docs) + coef
            lp = nb_log_joint_matrix(model, docs) + coef
            p0 = np.exp(lp0)
            gap_full += q * float(np.sum(p0 * (lp0 - lp)))
            m0 = np.logaddexp.reduce(lp0, axis=1)
            m1 = np.logaddexp.reduce(lp, axis=1)
            gap_marg += q * float(np.sum(np.exp(m0) * (m0 - m1)))
        return -lam * gap_full - (1.0 - lam) * gap_marg
    if lengths is None:
        raise ConfigError("chain KL gap needs a length distribution")
    total = 0.0
    for m, q in lengths.items():
        tokens, states = chain_outcomes(truth.num_states, truth.vocab_size, m)
        w = np.exp(chain_pass(truth, tokens, states, posteriors=False))
        for pos, p in policy.subsets(m):
            lab = _masked(states, pos)
            diff = chain_pass(truth, tokens, lab, posteriors=False) - chain_pass(model, tokens, lab, posteriors=False)
            total += q * p * float(np.sum(w * diff))
    return -total


@dataclass(frozen=True, eq=False)
class IdentifiabilityResult:
    status: str  # "identifiable" | "locally_non_identifiable" | "inconclusive"
    null_directions: np.ndarray
    report: AsymptoticReport


def identifiability_diagnostic(
    model: Model,
    policy: LabelingPolicy,
    lengths: LengthDistribution | None = None,
    method: str = "auto",
    n_samples: int = DEFAULT_MC_SAMPLES,
    rng=None,
) -> IdentifiabilityResult:
    """Numeric rank test on sigma.

    A rank deficiency means locally flat directions of the observed
    likelihood. Full rank under a policy that never reveals a label is
    reported inconclusive: the test is blind to discrete label permutations.
    """
    report = asymptotic_report(model, policy, lengths, method, n_samples, rng)
    if report.rank_deficient:
        return IdentifiabilityResult("locally_non_identifiable", report.null_directions, report)
    cost_lengths = LengthDistribution.fixed(1) if isinstance(model, NaiveBayesModel) else lengths
    if policy_cost(policy, cost_lengths) == 0:
        return IdentifiabilityResult("inconclusive", report.null_directions, report)
    return IdentifiabilityResult("identifiable", report.null_directions, report)

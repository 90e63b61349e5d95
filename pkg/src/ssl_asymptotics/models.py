"""Generative model families: multinomial naive Bayes and an HMM-parameterized chain.

Both families expose observed-data log-likelihoods (labels may be fully,
partially or not at all revealed), analytic scores with respect to the
reference-coded logit parameter vector, sampling and prediction.

Document likelihoods omit the multinomial coefficient, which is constant in
the parameters; log-likelihood values are therefore comparable only within
this package. Code that needs true outcome probabilities (enumeration) adds
the coefficient back explicitly via :func:`log_multinomial_coefficient`.

Scores are computed through the missing-data identity: the gradient of an
observed-data log-likelihood equals the complete-data gradient evaluated at
the expected sufficient statistics given what was observed. For a softmax
row with probabilities ``p`` and expected category counts ``c`` the logit
gradient is ``(c - sum(c) * p)[:-1]``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import (
    Block,
    DataError,
    DocumentSet,
    EnumerationError,
    LabelObservation,
    Layout,
    NumericalError,
    ParamVector,
    Sample,
    SequenceSet,
)
from .policy import LabelingPolicy, LengthDistribution

MAX_ENUMERATION = 2_000_000


def _check_rows(name: str, p: np.ndarray) -> np.ndarray:
    p = np.array(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p <= 0):
        raise NumericalError(f"{name} must be strictly positive")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-10):
        raise NumericalError(f"{name} rows must sum to 1")
    p.setflags(write=False)
    return p


def _dirichlet_rows(rng, rows, cats, concentration):
    p = rng.dirichlet(np.full(cats, concentration), size=rows)
    # keep draws away from the simplex boundary so every probability stays usable
    p = np.maximum(p, 1e-3)
    return p / p.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class NaiveBayesModel:
    prior: np.ndarray
    conditional: np.ndarray
    doc_length: int = 20

    def __post_init__(self):
        object.__setattr__(self, "prior", _check_rows("class prior", self.prior).reshape(-1))
        cond = _check_rows("class-conditional distributions", self.conditional)
        if cond.ndim != 2 or cond.shape[0] != self.prior.shape[0]:
            raise DataError("conditional must have one row per class")
        object.__setattr__(self, "conditional", cond)

    family = "naive_bayes"

    @property
    def num_classes(self) -> int:
        return self.prior.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.conditional.shape[1]

    @property
    def num_labels(self) -> int:
        return self.num_classes

    @cached_property
    def layout(self) -> Layout:
        return nb_layout(self.num_classes, self.vocab_size)

    @cached_property
    def log_prior(self) -> np.ndarray:
        return np.log(self.prior)

    @cached_property
    def log_conditional(self) -> np.ndarray:
        return np.log(self.conditional)

    def params(self) -> ParamVector:
        return ParamVector.from_probabilities(
            self.layout, {"prior": self.prior[None, :], "conditional": self.conditional}
        )

    def with_params(self, params) -> "NaiveBayesModel":
        return NaiveBayesModel.from_params(params, self.doc_length)

    @classmethod
    def from_params(cls, params: ParamVector, doc_length: int = 20) -> "NaiveBayesModel":
        probs = params.to_probabilities()
        return cls(probs["prior"][0], probs["conditional"], doc_length)

    @classmethod
    def random(cls, num_classes, vocab_size, rng, concentration=2.0, doc_length=20):
        prior = _dirichlet_rows(rng, 1, num_classes, 5.0 * concentration)[0]
        cond = _dirichlet_rows(rng, num_classes, vocab_size, concentration)
        return cls(prior, cond, doc_length)

    def permuted(self, perm) -> "NaiveBayesModel":
        perm = np.asarray(perm)
        return NaiveBayesModel(self.prior[perm], self.conditional[perm], self.doc_length)

    def probabilities(self) -> dict[str, np.ndarray]:
        return {"prior": self.prior[None, :], "conditional": self.conditional}


@dataclass(frozen=True, eq=False)
class ChainModel:
    initial: np.ndarray
    transition: np.ndarray
    emission: np.ndarray

    def __post_init__(self):
        init = _check_rows("initial distribution", self.initial).reshape(-1)
        trans = _check_rows("transition matrix", self.transition)
        emis = _check_rows("emission matrix", self.emission)
        k = init.shape[0]
        if trans.shape != (k, k) or emis.ndim != 2 or emis.shape[0] != k:
            raise DataError("chain model shapes are inconsistent")
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "transition", trans)
        object.__setattr__(self, "emission", emis)

    family = "chain"

    @property
    def num_states(self) -> int:
        return self.initial.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.emission.shape[1]

    @property
    def num_labels(self) -> int:
        return self.num_states

    @cached_property
    def layout(self) -> Layout:
        return chain_layout(self.num_states, self.vocab_size)

    def params(self) -> ParamVector:
        return ParamVector.from_probabilities(self.layout, self.probabilities())

    def with_params(self, params) -> "ChainModel":
        return ChainModel.from_params(params)

    @classmethod
    def from_params(cls, params: ParamVector) -> "ChainModel":
        p = params.to_probabilities()
        return cls(p["initial"][0], p["transition"], p["emission"])

    @classmethod
    def random(cls, num_states, vocab_size, rng, concentration=2.0):
        init = _dirichlet_rows(rng, 1, num_states, 5.0 * concentration)[0]
        trans = _dirichlet_rows(rng, num_states, num_states, concentration)
        emis = _dirichlet_rows(rng, num_states, vocab_size, concentration)
        return cls(init, trans, emis)

    def permuted(self, perm) -> "ChainModel":
        perm = np.asarray(perm)
        return ChainModel(self.initial[perm], self.transition[np.ix_(perm, perm)], self.emission[perm])

    def probabilities(self) -> dict[str, np.ndarray]:
        return {"initial": self.initial[None, :], "transition": self.transition, "emission": self.emission}


Model = NaiveBayesModel | ChainModel


def nb_layout(num_classes: int, vocab_size: int) -> Layout:
    return Layout(
        "naive_bayes",
        (Block("prior", 1, num_classes), Block("conditional", num_classes, vocab_size)),
    )


def chain_layout(num_states: int, vocab_size: int) -> Layout:
    return Layout(
        "chain",
        (
            Block("initial", 1, num_states),
            Block("transition", num_states, num_states),
            Block("emission", num_states, vocab_size),
        ),
    )


def _row_gradient(counts: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Logit gradient of sum(counts * log probs) for batched rows (..., cats)."""
    g = counts - counts.sum(axis=-1, keepdims=True) * probs
    return g[..., :-1]


# ---------------------------------------------------------------------------
# naive Bayes
# ---------------------------------------------------------------------------


def log_multinomial_coefficient(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts)
    return gammaln(counts.sum(axis=-1) + 1) - gammaln(counts + 1).sum(axis=-1)


def nb_log_joint_matrix(model: NaiveBayesModel, counts: np.ndarray) -> np.ndarray:
    """log p(x, y) for every document and class, shape (n, C)."""
    counts = np.asarray(counts, dtype=float).reshape(-1, model.vocab_size)
    return model.log_prior[None, :] + counts @ model.log_conditional.T


def nb_log_observed(model: NaiveBayesModel, counts, labels) -> np.ndarray:
    lj = nb_log_joint_matrix(model, counts)
    labels = np.asarray(labels).reshape(-1)
    out = logsumexp(lj, axis=1)
    lab = labels >= 0
    out[lab] = lj[np.flatnonzero(lab), labels[lab]]
    return out


def nb_responsibilities(model: NaiveBayesModel, counts, labels):
    """Class posteriors (point masses for labeled docs) and per-doc log-likelihoods."""
    lj = nb_log_joint_matrix(model, counts)
    labels = np.asarray(labels).reshape(-1)
    ll = logsumexp(lj, axis=1)
    resp = np.exp(lj - ll[:, None])
    lab = np.flatnonzero(labels >= 0)
    if lab.size:
        ll[lab] = lj[lab, labels[lab]]
        resp[lab] = 0.0
        resp[lab, labels[lab]] = 1.0
    return resp, ll


def nb_scores(model: NaiveBayesModel, counts, labels) -> np.ndarray:
    counts = np.asarray(counts, dtype=float).reshape(-1, model.vocab_size)
    resp, _ = nb_responsibilities(model, counts, labels)
    n = counts.shape[0]
    length = counts.sum(axis=1)
    g_prior = _row_gradient(resp, model.prior[None, :])
    # expected term counts for class c: resp_c * x ; expected row total: resp_c * |x|
    ec = resp[:, :, None] * counts[:, None, :]
    g_cond = ec[..., :-1] - (resp * length[:, None])[:, :, None] * model.conditional[None, :, :-1]
    return np.concatenate([g_prior, g_cond.reshape(n, -1)], axis=1)


def nb_log_joint(model: NaiveBayesModel, sample: Sample) -> float:
    """log pi_y + sum_v count_v log theta_{y,v} (multinomial coefficient omitted)."""
    if sample.labels.kind != "full":
        raise DataError("nb_log_joint needs a labeled sample")
    y = sample.labels.values[0]
    if not 0 <= y < model.num_classes:
        raise DataError(f"label {y} outside class range")
    return float(nb_log_joint_matrix(model, sample.observation)[0, y])


def nb_log_marginal(model: NaiveBayesModel, sample: Sample) -> float:
    return float(logsumexp(nb_log_joint_matrix(model, sample.observation)[0]))


def nb_outcomes(vocab_size: int, doc_length: int, limit: int = MAX_ENUMERATION) -> np.ndarray:
    """Every count vector of a length-``doc_length`` document, shape (M, V)."""
    size = math.comb(doc_length + vocab_size - 1, vocab_size - 1)
    if size > limit:
        raise EnumerationError(f"{size} documents exceed the enumeration limit {limit}")
    out = np.zeros((size, vocab_size), dtype=np.int64)
    for i, combo in enumerate(itertools.combinations_with_replacement(range(vocab_size), doc_length)):
        for v in combo:
            out[i, v] += 1
    return out


# ---------------------------------------------------------------------------
# chain
# ---------------------------------------------------------------------------


def chain_pass(model: ChainModel, tokens: np.ndarray, labels: np.ndarray, posteriors: bool = True):
    """Scaled forward-backward over equal-length sequences with clamped labels.

    ``tokens`` and ``labels`` are (N, m); a label >= 0 clamps that position's
    state. Returns per-sequence log p(observed labels, x) and, when asked,
    state posteriors gamma (N, m, K) and transition counts xi summed over
    time (N, K, K).
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    n, m = tokens.shape
    k = model.num_states
    if np.any(labels >= k):
        raise DataError("observed label outside state range")
    b = model.emission.T[tokens]
    obs = labels >= 0
    if obs.any():
        ni, ti = np.nonzero(obs)
        keep = b[ni, ti, labels[ni, ti]]
        b[ni, ti, :] = 0.0
        b[ni, ti, labels[ni, ti]] = keep
    trans = model.transition
    alpha = np.empty((n, m, k))
    scale = np.empty((n, m))
    a = model.initial[None, :] * b[:, 0]
    scale[:, 0] = a.sum(axis=1)
    alpha[:, 0] = a / scale[:, 0, None]
    for t in range(1, m):
        a = (alpha[:, t - 1] @ trans) * b[:, t]
        scale[:, t] = a.sum(axis=1)
        alpha[:, t] = a / scale[:, t, None]
    loglik = np.log(scale).sum(axis=1)
    if not posteriors:
        return loglik
    beta = np.empty((n, m, k))
    beta[:, m - 1] = 1.0
    for t in range(m - 2, -1, -1):
        beta[:, t] = ((b[:, t + 1] * beta[:, t + 1]) @ trans.T) / scale[:, t + 1, None]
    gamma = alpha * beta
    xi = np.zeros((n, k, k))
    for t in range(m - 1):
        right = b[:, t + 1] * beta[:, t + 1] / scale[:, t + 1, None]
        xi += alpha[:, t, :, None] * trans[None] * right[:, None, :]
    return loglik, gamma, xi


def chain_expected_counts(model: ChainModel, tokens, labels):
    """Per-sequence expected sufficient statistics (initial, transition, emission)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    loglik, gamma, xi = chain_pass(model, tokens, labels)
    emis = np.empty((tokens.shape[0], model.num_states, model.vocab_size))
    for v in range(model.vocab_size):
        emis[:, :, v] = (gamma * (tokens == v)[:, :, None]).sum(axis=1)
    return loglik, gamma[:, 0], xi, emis


def chain_scores(model: ChainModel, tokens, labels) -> np.ndarray:
    _, init, trans, emis = chain_expected_counts(model, tokens, labels)
    n = init.shape[0]
    return np.concatenate(
        [
            _row_gradient(init, model.initial[None, :]),
            _row_gradient(trans, model.transition[None]).reshape(n, -1),
            _row_gradient(emis, model.emission[None]).reshape(n, -1),
        ],
        axis=1,
    )


def chain_log_observed(model: ChainModel, sample: Sample) -> float:
    """log p(observed labels, x) by forward recursion with clamped positions."""
    tokens = np.asarray(sample.observation, dtype=np.int64).reshape(1, -1)
    if tokens.shape[1] == 0:
        raise DataError("token sequence must be non-empty")
    labels = sample.labels.to_array().reshape(1, -1)
    if labels.shape != tokens.shape:
        raise DataError("label observation length differs from the token sequence")
    return float(chain_pass(model, tokens, labels, posteriors=False)[0])


def chain_outcomes(num_states: int, vocab_size: int, m: int, limit: int = MAX_ENUMERATION):
    """Every (tokens, states) pair of length m as two (M, m) arrays."""
    size = (num_states * vocab_size) ** m
    if size > limit:
        raise EnumerationError(f"{size} sequences exceed the enumeration limit {limit}")
    xs = np.array(list(itertools.product(range(vocab_size), repeat=m)), dtype=np.int64).reshape(-1, m)
    ys = np.array(list(itertools.product(range(num_states), repeat=m)), dtype=np.int64).reshape(-1, m)
    tokens = np.repeat(xs, ys.shape[0], axis=0)
    states = np.tile(ys, (xs.shape[0], 1))
    return tokens, states


def length_groups(data: SequenceSet):
    """Yield (m, indices, tokens (N, m), labels (N, m)) per distinct length."""
    lengths = data.lengths
    for m in np.unique(lengths):
        idx = np.flatnonzero(lengths == m)
        tokens = np.stack([data.tokens[i] for i in idx])
        labels = np.stack([data.labels[i] for i in idx])
        yield int(m), idx, tokens, labels


# ---------------------------------------------------------------------------
# family-generic entry points
# ---------------------------------------------------------------------------


def log_observed(model: Model, data) -> np.ndarray:
    """Per-sample observed-data log-likelihood, in dataset order."""
    if isinstance(model, NaiveBayesModel):
        _require_kind(data, DocumentSet)
        return nb_log_observed(model, data.counts, data.labels)
    _require_kind(data, SequenceSet)
    out = np.empty(len(data))
    for _, idx, tok, lab in length_groups(data):
        out[idx] = chain_pass(model, tok, lab, posteriors=False)
    return out


def scores(model: Model, data) -> np.ndarray:
    """Per-sample observed-data scores, shape (n, r)."""
    if isinstance(model, NaiveBayesModel):
        _require_kind(data, DocumentSet)
        return nb_scores(model, data.counts, data.labels)
    _require_kind(data, SequenceSet)
    out = np.empty((len(data), model.layout.dim))
    for _, idx, tok, lab in length_groups(data):
        out[idx] = chain_scores(model, tok, lab)
    return out


def score_observed(model: Model, sample: Sample) -> np.ndarray:
    """Gradient of the observed-data log-likelihood of one sample."""
    if isinstance(model, NaiveBayesModel):
        labels = sample.labels.to_array()
        if labels.shape != (1,):
            raise DataError("classification samples carry a single label")
        return nb_scores(model, sample.observation, labels)[0]
    tokens = np.asarray(sample.observation, dtype=np.int64).reshape(1, -1)
    return chain_scores(model, tokens, sample.labels.to_array().reshape(1, -1))[0]


def _require_kind(data, kind):
    if not isinstance(data, kind):
        raise DataError(f"expected a {kind.__name__}, got {type(data).__name__}")


def _categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One draw per row of ``probs`` (n, K) by inverse CDF."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[1] - 1)


def sample_from(
    model: Model,
    n: int,
    policy: LabelingPolicy | None = None,
    lengths: LengthDistribution | None = None,
    rng: np.random.Generator | None = None,
):
    """Draw n samples from the model and reveal labels through ``policy``.

    True labels are kept in the dataset's ``hidden`` field. For naive Bayes,
    ``lengths`` (if given) is the document length distribution; otherwise the
    model's fixed ``doc_length`` is used. Random draws happen in a fixed
    order: lengths, then labels and observations, then policy decisions.
    """
    if n < 1:
        raise DataError("sample size must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    policy = policy or LabelingPolicy.all_or_nothing(1.0)
    if isinstance(model, NaiveBayesModel):
        doc_len = (
            np.full(n, model.doc_length) if lengths is None else lengths.sample(n, rng)
        )
        y = _categorical(rng, np.broadcast_to(model.prior, (n, model.num_classes)))
        counts = rng.multinomial(doc_len, model.conditional[y])
        masks = policy.masks(np.ones(n, dtype=np.int64), rng)
        revealed = np.where(np.array([mk[0] for mk in masks]), y, -1)
        return DocumentSet(counts, revealed, model.vocab_size, model.num_classes, hidden=y)

    if lengths is None:
        raise DataError("chain sampling needs a length distribution")
    seq_len = lengths.sample(n, rng)
    tokens: list = [None] * n
    states: list = [None] * n
    for m in np.unique(seq_len):
        idx = np.flatnonzero(seq_len == m)
        s = np.empty((idx.size, m), dtype=np.int64)
        x = np.empty((idx.size, m), dtype=np.int64)
        s[:, 0] = _categorical(rng, np.broadcast_to(model.initial, (idx.size, model.num_states)))
        x[:, 0] = _categorical(rng, model.emission[s[:, 0]])
        for t in range(1, m):
            s[:, t] = _categorical(rng, model.transition[s[:, t - 1]])
            x[:, t] = _categorical(rng, model.emission[s[:, t]])
        for row, i in enumerate(idx):
            tokens[i] = x[row]
            states[i] = s[row]
    masks = policy.masks(seq_len, rng)
    revealed = [np.where(mk, s, -1) for mk, s in zip(masks, states)]
    return SequenceSet(tuple(tokens), tuple(revealed), model.vocab_size, model.num_states, tuple(states))


def predict(model: Model, observation) -> int | np.ndarray:
    """Most probable label (positionwise posterior decoding for chains).

    Ties go to the lowest label index.
    """
    if isinstance(model, NaiveBayesModel):
        return int(np.argmax(nb_log_joint_matrix(model, observation)[0]))
    tokens = np.asarray(observation, dtype=np.int64).reshape(1, -1)
    _, gamma, _ = chain_pass(model, tokens, np.full(tokens.shape, -1))
    return np.argmax(gamma[0], axis=1)


def predict_batch(model: NaiveBayesModel, counts) -> np.ndarray:
    return np.argmax(nb_log_joint_matrix(model, counts), axis=1)


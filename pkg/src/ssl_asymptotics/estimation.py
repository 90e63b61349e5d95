"""EM maximization of the semi-supervised observed-data likelihood.

Labeled samples contribute point-mass responsibilities, unlabeled ones (or
unlabeled sequence positions) their posteriors. M-steps are closed form and
add a symmetric pseudo-count ``smoothing`` to every category, so EM ascends
the smoothed objective ``loglik + smoothing * sum(log p)``; with
``smoothing=0`` that is the plain observed log-likelihood. The recorded
trace is this objective and is checked for ascent at every step.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, DataError, DocumentSet, NumericalError, ParamVector, SequenceSet
from .models import (
    ChainModel,
    Model,
    NaiveBayesModel,
    chain_expected_counts,
    length_groups,
    log_observed,
    nb_responsibilities,
)

ASCENT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 500
    tolerance: float = 1e-8
    restarts: int = 5
    init: str = "labeled"
    smoothing: float = 1e-3
    seed: int = 0
    perturbation: float = 0.25

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ConfigError("EM tolerance must be positive")
        if self.restarts < 1:
            raise ConfigError("EM needs at least one restart")
        if self.smoothing < 0:
            raise ConfigError("smoothing must be non-negative")
        if self.init not in ("labeled", "random"):
            raise ConfigError(f"unknown init rule {self.init!r}")

    @classmethod
    def from_dict(cls, d: dict | None) -> "EmConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown EM settings: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class FitResult:
    estimate: ParamVector
    model: Model
    log_likelihood: float
    objective: float
    iterations: int
    trace: tuple[float, ...]
    restart: int
    converged: bool
    restart_log_likelihoods: tuple[float, ...] = field(default=())

    def to_dict(self) -> dict:
        probs = {k: v.tolist() for k, v in self.model.probabilities().items()}
        return {
            "family": self.model.family,
            "probabilities": probs,
            "params": self.estimate.values.tolist(),
            "log_likelihood": self.log_likelihood,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "restart": self.restart,
            "restart_log_likelihoods": list(self.restart_log_likelihoods),
            "trace": list(self.trace),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def observed_loglik(model: Model, data) -> float:
    """Sum of per-sample observed-data log-likelihoods (0 for an empty dataset)."""
    if len(data) == 0:
        return 0.0
    return math.fsum(log_observed(model, data))


def _normalize(counts: np.ndarray, smoothing: float) -> np.ndarray:
    c = counts + smoothing
    tot = c.sum(axis=-1, keepdims=True)
    k = c.shape[-1]
    flat = np.broadcast_to(np.full(k, 1.0 / k), c.shape)
    return np.where(tot > 0, c / np.where(tot > 0, tot, 1.0), flat)


def _penalty(model: Model, smoothing: float) -> float:
    if smoothing == 0:
        return 0.0
    return smoothing * math.fsum(np.log(p).sum() for p in model.probabilities().values())


def _perturb(model: Model, rng: np.random.Generator, scale: float):
    pv = model.params()
    noisy = ParamVector(pv.values + rng.normal(0.0, scale, pv.dim), pv.layout)
    return model.with_params(noisy)


def _run_em(model, estep, mstep, smoothing, config: EmConfig):
    """Shared EM loop; estep(model) -> (stats, loglik), mstep(stats) -> model."""
    trace: list[float] = []
    converged = False
    iterations = 0
    loglik = float("nan")
    while True:
        stats, loglik = estep(model)
        obj = loglik + _penalty(model, smoothing)
        if not math.isfinite(obj):
            raise NumericalError("EM objective is not finite")
        if trace and obj < trace[-1] - ASCENT_TOLERANCE:
            raise NumericalError(
                f"EM objective decreased from {trace[-1]!r} to {obj!r} at iteration {iterations}"
            )
        trace.append(obj)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) <= config.tolerance * abs(trace[-2]):
            converged = True
            break
        if iterations >= config.max_iterations:
            break
        model = mstep(stats)
        iterations += 1
    return model, loglik, trace, iterations, converged


def _best_of_restarts(inits, estep, mstep, config):
    runs = []
    for i, init in enumerate(inits):
        runs.append((i,) + _run_em(init, estep, mstep, config.smoothing, config))
    # highest observed log-likelihood; earliest restart on ties
    best = max(runs, key=lambda r: (r[2], -r[0]))
    i, model, loglik, trace, iterations, converged = best
    return FitResult(
        estimate=model.params(),
        model=model,
        log_likelihood=loglik,
        objective=trace[-1],
        iterations=iterations,
        trace=tuple(trace),
        restart=i,
        converged=converged,
        restart_log_likelihoods=tuple(r[2] for r in runs),
    )


# ---------------------------------------------------------------------------
# naive Bayes
# ---------------------------------------------------------------------------


def nb_mstep(resp: np.ndarray, counts: np.ndarray, smoothing: float, doc_length: int) -> NaiveBayesModel:
    prior = _normalize(resp.sum(axis=0), smoothing)
    cond = _normalize(resp.T @ counts, smoothing)
    return NaiveBayesModel(prior, cond, doc_length)


def closed_form_naive_bayes(data: DocumentSet, smoothing: float = 1e-3, doc_length: int | None = None):
    """Smoothed relative-frequency estimate from the labeled documents only."""
    lab = data.labels >= 0
    resp = np.zeros((int(lab.sum()), data.num_classes))
    resp[np.arange(resp.shape[0]), data.labels[lab]] = 1.0
    return nb_mstep(resp, data.counts[lab].astype(float), smoothing, doc_length or _doc_length(data))


def _doc_length(data: DocumentSet) -> int:
    if len(data) == 0:
        return 20
    return int(np.round(data.counts.sum(axis=1).mean()))


def fit_naive_bayes(
    data: DocumentSet,
    config: EmConfig | None = None,
    allow_unlabeled: bool = False,
    doc_length: int | None = None,
) -> FitResult:
    """Semi-supervised naive Bayes by EM with restarts."""
    config = config or EmConfig()
    if not isinstance(data, DocumentSet):
        raise DataError("fit_naive_bayes needs a DocumentSet")
    if len(data) == 0:
        raise DataError("cannot fit an empty dataset")
    n_labeled = int((data.labels >= 0).sum())
    if n_labeled == 0 and not allow_unlabeled:
        raise DataError(
            "no labeled documents: the class labels are only identified up to permutation; "
            "pass allow_unlabeled to fit anyway"
        )
    doc_length = doc_length or _doc_length(data)
    counts = data.counts.astype(float)
    labels = data.labels
    s = config.smoothing
    rng = np.random.default_rng(config.seed)

    def estep(model):
        resp, ll = nb_responsibilities(model, counts, labels)
        return resp, math.fsum(ll)

    def mstep(resp):
        return nb_mstep(resp, counts, s, doc_length)

    inits = []
    for i in range(config.restarts):
        if n_labeled and config.init == "labeled":
            base = closed_form_naive_bayes(data, max(s, 1e-3), doc_length)
            inits.append(base if i == 0 else _perturb(base, rng, config.perturbation))
        else:
            inits.append(
                NaiveBayesModel.random(data.num_classes, data.vocab_size, rng, 1.0, doc_length)
            )
    return _best_of_restarts(inits, estep, mstep, config)


# ---------------------------------------------------------------------------
# chain
# ---------------------------------------------------------------------------


def _compress(data: SequenceSet):
    """Per length: unique (tokens, labels) rows with multiplicities."""
    groups = []
    for m, _, tok, lab in length_groups(data):
        rows, counts = np.unique(np.hstack([tok, lab]), axis=0, return_counts=True)
        groups.append((rows[:, :m], rows[:, m:], counts.astype(float)))
    return groups


def chain_mstep(stats, smoothing: float) -> ChainModel:
    init, trans, emis = stats
    return ChainModel(_normalize(init, smoothing), _normalize(trans, smoothing), _normalize(emis, smoothing))


def _chain_estep(model: ChainModel, groups):
    k, v = model.num_states, model.vocab_size
    init = np.zeros(k)
    trans = np.zeros((k, k))
    emis = np.zeros((k, v))
    parts = []
    for tok, lab, w in groups:
        ll, g0, xi, em = chain_expected_counts(model, tok, lab)
        init += w @ g0
        trans += np.tensordot(w, xi, axes=1)
        emis += np.tensordot(w, em, axes=1)
        parts.append(w * ll)
    return (init, trans, emis), math.fsum(np.concatenate(parts))


def supervised_chain_counts(data: SequenceSet):
    """Counts from observed labels only: initial, adjacent observed pairs, emissions."""
    k, v = data.num_states, data.vocab_size
    init = np.zeros(k)
    trans = np.zeros((k, k))
    emis = np.zeros((k, v))
    for tok, lab in zip(data.tokens, data.labels):
        if lab[0] >= 0:
            init[lab[0]] += 1
        both = (lab[:-1] >= 0) & (lab[1:] >= 0)
        np.add.at(trans, (lab[:-1][both], lab[1:][both]), 1)
        seen = lab >= 0
        np.add.at(emis, (lab[seen], tok[seen]), 1)
    return init, trans, emis


def fit_chain(data: SequenceSet, config: EmConfig | None = None) -> FitResult:
    """Chain model by EM with label-clamped forward-backward."""
    config = config or EmConfig()
    if not isinstance(data, SequenceSet):
        raise DataError("fit_chain needs a SequenceSet")
    if len(data) == 0:
        raise DataError("cannot fit an empty dataset")
    groups = _compress(data)
    s = config.smoothing
    rng = np.random.default_rng(config.seed)
    has_labels = any(np.any(lab >= 0) for lab in data.labels)

    def estep(model):
        return _chain_estep(model, groups)

    def mstep(stats):
        return chain_mstep(stats, s)

    inits = []
    for i in range(config.restarts):
        if has_labels and config.init == "labeled":
            base = chain_mstep(supervised_chain_counts(data), max(s, 1e-3))
            inits.append(base if i == 0 else _perturb(base, rng, config.perturbation))
        else:
            inits.append(ChainModel.random(data.num_states, data.vocab_size, rng, 1.0))
    return _best_of_restarts(inits, estep, mstep, config)


def fit(data, config: EmConfig | None = None, allow_unlabeled: bool = False, doc_length: int | None = None):
    if isinstance(data, DocumentSet):
        return fit_naive_bayes(data, config, allow_unlabeled, doc_length)
    return fit_chain(data, config)


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------


def align_states(model: Model, reference: Model) -> Model:
    """Relabel latent states of ``model`` to best match ``reference`` (max-abs distance)."""
    k = model.num_labels
    best, best_d = model, math.inf
    for perm in itertools.permutations(range(k)):
        cand = model.permuted(list(perm))
        d = probability_distance(cand, reference)
        if d < best_d - 1e-15:
            best, best_d = cand, d
    return best


def probability_distance(a: Model, b: Model) -> float:
    """Max-abs difference over all probability entries."""
    pa, pb = a.probabilities(), b.probabilities()
    return max(float(np.max(np.abs(pa[k] - pb[k]))) for k in pa)


def param_error(estimate: Model, truth: Model, align: bool = False) -> np.ndarray:
    """Logit-space difference vector, optionally after state alignment."""
    if align:
        estimate = align_states(estimate, truth)
    return estimate.params().values - truth.params().values

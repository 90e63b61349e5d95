"""Replicate studies on synthetic fixtures.

Every replicate draws its training pool, held-out set and policy decisions
from separate random streams keyed by (seed, stream, replicate, ...).
Within a replicate the training sets of different grid points are nested
prefixes of one pool and share policy decisions, so grid points differ only
in n and in the labeling design. Results are long-form rows
``(study, point, n, lam, policy, r, replicate, metric, value)``; aggregates
are always recomputed from the rows.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .asymptotics import asymptotic_report, enumerable, sigma_classification
from .core import ConfigError
from .estimation import EmConfig, fit_chain, fit_naive_bayes, param_error, align_states
from .models import (
    ChainModel,
    NaiveBayesModel,
    log_multinomial_coefficient,
    log_observed,
    nb_log_joint_matrix,
    nb_outcomes,
    predict_batch,
    sample_from,
)
from .policy import EmptySelector, LabelingPolicy, LengthDistribution, policy_cost
from .tradeoff import Candidate, Objective, TradeoffSpec, frontier, plugin_traces, two_stage

SCHEMA_VERSION = 1
ROW_FIELDS = ("study", "point", "n", "lam", "policy", "r", "replicate", "metric", "value")

TRAIN, TEST, POLICY, FIT, STAGE = 1, 2, 3, 4, 5

CLASSIFICATION_METRICS = ("error_rate", "mse_trace", "log_trace_asym_var", "cost")
STRUCTURED_METRICS = ("per_sequence_perplexity", "mse_trace", "cost")
PERPLEXITY_FORMULA = {
    "sample": "exp(-mean_i log p_hat(x_i, y_i)) over held-out fully labeled sequences",
    "exact": "exp(-E_true log p_hat(x, y)), the cross-entropy against the generating chain",
}


def nb_outcome_table(truth: NaiveBayesModel) -> tuple[np.ndarray, np.ndarray]:
    """All documents with their joint probabilities p(x, y) under ``truth``."""
    docs = nb_outcomes(truth.vocab_size, truth.doc_length)
    p0 = np.exp(nb_log_joint_matrix(truth, docs) + log_multinomial_coefficient(docs)[:, None])
    return docs, p0


def nb_exact_risk(estimate: NaiveBayesModel, truth: NaiveBayesModel, table=None) -> float:
    """Misclassification probability of ``estimate`` on fresh data from ``truth``."""
    docs, p0 = table if table is not None else nb_outcome_table(truth)
    pred = predict_batch(estimate, docs)
    return float(max(1.0 - p0[np.arange(len(docs)), pred].sum(), 0.0))


def chain_cross_entropy(estimate: ChainModel, truth: ChainModel, lengths: LengthDistribution) -> float:
    """-E_truth log p_estimate(x, y) for fully labeled sequences, in closed form."""
    la, lt, le = np.log(estimate.initial), np.log(estimate.transition), np.log(estimate.emission)
    pair = truth.transition * lt
    emit = (truth.emission * le).sum(axis=1)
    total = 0.0
    for m, q in lengths.items():
        marg = truth.initial.copy()
        e = marg @ la + marg @ emit
        for _ in range(1, m):
            e += marg @ pair.sum(axis=1)
            marg = marg @ truth.transition
            e += marg @ emit
        total += q * e
    return -float(total)


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def standard_nb_fixture(seed: int = 11, doc_length: int = 20) -> NaiveBayesModel:
    """Two classes, five terms, 20-token documents, seeded Dirichlet draw."""
    return NaiveBayesModel.random(2, 5, stream(seed, 0), concentration=2.0, doc_length=doc_length)


def standard_chain_fixture(seed: int = 11) -> ChainModel:
    """Two states, three symbols, seeded Dirichlet draw (use with length 8)."""
    return ChainModel.random(2, 3, stream(seed, 0), concentration=2.0)


STANDARD_CHAIN_LENGTHS = LengthDistribution.fixed(8)


@dataclass(frozen=True, eq=False)
class StudyConfig:
    kind: str
    model: NaiveBayesModel | ChainModel
    ns: tuple[int, ...] = ()
    lambdas: tuple[float, ...] = ()
    policies: tuple[tuple[str, LabelingPolicy], ...] = ()
    lengths: LengthDistribution | None = None
    replicates: int = 1
    metrics: tuple[str, ...] = ()
    seed: int = 0
    test_size: int = 2000
    em: EmConfig = field(default_factory=lambda: EmConfig(restarts=1))
    r_grid: tuple[int, ...] = ()
    pool_size: int = 2000
    reference_lambda: float = 0.5
    tradeoff: TradeoffSpec | None = None
    variance_samples: int = 100_000
    holdout: str = "auto"
    threads: int = 1

    def __post_init__(self):
        if self.holdout not in ("auto", "exact", "sample"):
            raise ConfigError(f"unknown holdout mode {self.holdout!r}")
        if self.kind not in ("classification", "structured", "region", "two_stage"):
            raise ConfigError(f"unknown study kind {self.kind!r}")
        if self.replicates < 1:
            raise ConfigError("a study needs at least one replicate")
        if self.kind == "two_stage":
            if not self.r_grid:
                raise ConfigError("two-stage study needs a non-empty r grid")
            if max(self.r_grid) > self.pool_size:
                raise ConfigError("r larger than the pool")
        elif not self.ns:
            raise ConfigError("study needs a non-empty n grid")
        if self.kind in ("classification", "region") and not self.lambdas:
            raise ConfigError("study needs a non-empty lambda grid")
        if self.kind == "structured" and not self.policies:
            raise ConfigError("structured study needs at least one policy")
        if self.kind != "structured" and not isinstance(self.model, NaiveBayesModel):
            raise ConfigError(f"{self.kind} study runs on a naive Bayes model")
        if self.kind == "structured" and not isinstance(self.model, ChainModel):
            raise ConfigError("structured study runs on a chain model")
        object.__setattr__(self, "ns", tuple(int(n) for n in self.ns))
        object.__setattr__(self, "lambdas", tuple(float(l) for l in self.lambdas))
        if not self.metrics:
            default = {
                "classification": CLASSIFICATION_METRICS,
                "region": ("mse_trace", "cost"),
                "structured": STRUCTURED_METRICS,
                "two_stage": ("trace_abs_error",),
            }[self.kind]
            object.__setattr__(self, "metrics", default)

    def resolved_holdout(self) -> str:
        """``exact`` scores against the generating distribution itself (an infinite test set)."""
        if self.holdout != "auto":
            return self.holdout
        if isinstance(self.model, ChainModel):
            return "exact"
        return "exact" if enumerable(self.model) else "sample"

    def describe(self) -> dict:
        d = {
            "kind": self.kind,
            "family": self.model.family,
            "model": {k: v.tolist() for k, v in self.model.probabilities().items()},
            "ns": list(self.ns),
            "lambdas": list(self.lambdas),
            "policies": {name: p.to_config() for name, p in self.policies},
            "lengths": None if self.lengths is None else self.lengths.to_config(),
            "replicates": self.replicates,
            "metrics": list(self.metrics),
            "seed": self.seed,
            "test_size": self.test_size,
            "holdout": self.resolved_holdout(),
            "em": self.em.__dict__.copy(),
        }
        if self.kind == "two_stage":
            d.update(r_grid=list(self.r_grid), pool_size=self.pool_size, reference_lambda=self.reference_lambda)
        if isinstance(self.model, NaiveBayesModel):
            d["doc_length"] = self.model.doc_length
        return d


@dataclass(frozen=True)
class StudyRow:
    study: str
    point: int
    n: int | None
    lam: float | None
    policy: str | None
    r: int | None
    replicate: int
    metric: str
    value: float


@dataclass(frozen=True, eq=False)
class StudyResult:
    config: StudyConfig
    rows: tuple[StudyRow, ...]
    annotations: dict = field(default_factory=dict)

    def values(self, metric: str, **where) -> dict:
        """point -> array of replicate values for ``metric`` (optionally filtered)."""
        out: dict = {}
        for row in self.rows:
            if row.metric != metric or any(getattr(row, k) != v for k, v in where.items()):
                continue
            out.setdefault(row.point, []).append(row.value)
        return {k: np.array(v) for k, v in out.items()}

    def aggregates(self) -> list[dict]:
        groups: dict = {}
        keys: dict = {}
        for row in self.rows:
            g = (row.point, row.metric)
            groups.setdefault(g, []).append(row.value)
            keys[g] = row
        out = []
        for (point, metric), vals in groups.items():
            v = np.array(vals)
            row = keys[(point, metric)]
            out.append({
                "point": point, "n": row.n, "lam": row.lam, "policy": row.policy, "r": row.r,
                "metric": metric, "count": int(v.size),
                "mean": float(v.mean()), "median": float(np.median(v)),
                "std": float(v.std(ddof=1)) if v.size > 1 else 0.0,
                "q1": float(np.quantile(v, 0.25)), "q3": float(np.quantile(v, 0.75)),
            })
        return out

    def medians(self, metric: str) -> dict:
        return {a["point"]: a["median"] for a in self.aggregates() if a["metric"] == metric}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in self.rows:
            w.writerow([
                r.study, r.point, _cell(r.n), _cell(r.lam), _cell(r.policy), _cell(r.r),
                r.replicate, r.metric, repr(float(r.value)),
            ])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "row_fields": list(ROW_FIELDS),
            "config": self.config.describe(),
            "perplexity_formula": (
                PERPLEXITY_FORMULA[self.config.resolved_holdout()] if self.config.kind == "structured" else None
            ),
            "aggregates": self.aggregates(),
            "annotations": self.annotations,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def _cell(x):
    if x is None:
        return ""
    return repr(x) if isinstance(x, float) else x


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _em(config: StudyConfig, *key) -> EmConfig:
    seed = int(stream(config.seed, FIT, *key).integers(0, 2**31 - 1))
    return replace(config.em, seed=seed)


# ---------------------------------------------------------------------------
# classification and region studies
# ---------------------------------------------------------------------------


def _nb_grid(config: StudyConfig):
    return [(n, lam) for n in config.ns for lam in config.lambdas]


def _asymptotic_traces(config: StudyConfig) -> dict:
    model = config.model
    method = "enumeration" if enumerable(model) else "montecarlo"
    out = {}
    for lam in config.lambdas:
        rep = sigma_classification(model, lam, method, config.variance_samples, stream(config.seed, 9))
        out[lam] = rep.trace_inverse
    return out


def _nb_replicate(config: StudyConfig, rep: int, traces: dict, study: str) -> list[StudyRow]:
    model = config.model
    truth = model.params().values
    grid = _nb_grid(config)
    max_n = max(config.ns)
    pool = sample_from(model, max_n, None, None, stream(config.seed, TRAIN, rep))
    need_test = "error_rate" in config.metrics and config.resolved_holdout() == "sample"
    test = sample_from(model, config.test_size, None, None, stream(config.seed, TEST, rep)) if need_test else None
    table = nb_outcome_table(model) if "error_rate" in config.metrics and test is None else None
    rows = []
    for point, (n, lam) in enumerate(grid):
        comp = LabelingPolicy.all_or_nothing(lam).choose(stream(config.seed, POLICY, rep), max_n)[:n]
        labels = np.where(comp == 0, pool.hidden[:n], -1)
        data = pool.subset(np.arange(n)).with_labels(labels)
        result = fit_naive_bayes(data, _em(config, rep, point), allow_unlabeled=True, doc_length=model.doc_length)
        est = result.model
        values = {}
        if "error_rate" in config.metrics:
            if test is None:
                values["error_rate"] = nb_exact_risk(est, model, table)
            else:
                values["error_rate"] = float(np.mean(predict_batch(est, test.counts) != test.hidden))
        if "mse_trace" in config.metrics:
            values["mse_trace"] = float(np.sum((est.params().values - truth) ** 2))
        if "log_trace_asym_var" in config.metrics:
            values["log_trace_asym_var"] = math.log(traces[lam] / n)
        if "cost" in config.metrics:
            values["cost"] = lam * n
        for metric in config.metrics:
            rows.append(StudyRow(study, point, n, lam, None, None, rep, metric, values[metric]))
    return rows


def run_classification_study(config: StudyConfig) -> StudyResult:
    """Error rate, squared parameter error and asymptotic variance over an (n, lam) grid."""
    if config.kind not in ("classification", "region"):
        raise ConfigError("not a classification study config")
    traces = _asymptotic_traces(config) if "log_trace_asym_var" in config.metrics else {}
    parts = _map(lambda rep: _nb_replicate(config, rep, traces, config.kind), range(config.replicates), config.threads)
    rows = tuple(r for part in parts for r in part)
    grid = _nb_grid(config)
    ann = {
        "grid": [{"point": i, "n": n, "lam": lam} for i, (n, lam) in enumerate(grid)],
        "asymptotic_error": (
            {str(i): traces[lam] / n for i, (n, lam) in enumerate(grid)} if traces else {}
        ),
    }
    return StudyResult(config, rows, ann)


def run_region_study(config: StudyConfig) -> StudyResult:
    """(cost, median squared error) per grid point with frontier flags."""
    metrics = tuple(dict.fromkeys(config.metrics + ("mse_trace", "cost")))
    cfg = replace(config, kind="region", metrics=metrics)
    base = run_classification_study(cfg)
    med_err = base.medians("mse_trace")
    grid = _nb_grid(cfg)
    points = [(lam * n, med_err[i]) for i, (n, lam) in enumerate(grid)]
    front, dominated = frontier(points)
    scatter = [
        {"point": i, "n": n, "lam": lam, "cost": points[i][0], "error": points[i][1], "on_frontier": i in front}
        for i, (n, lam) in enumerate(grid)
    ]
    ann = dict(base.annotations, scatter=scatter, frontier=front, dominated=dominated)
    return StudyResult(cfg, base.rows, ann)


# ---------------------------------------------------------------------------
# structured study
# ---------------------------------------------------------------------------


def _chain_replicate(config: StudyConfig, rep: int, traces: dict) -> list[StudyRow]:
    model = config.model
    lengths = config.lengths
    max_n = max(config.ns)
    pool = sample_from(model, max_n, None, lengths, stream(config.seed, TRAIN, rep))
    test = None
    if config.resolved_holdout() == "sample":
        test = sample_from(model, config.test_size, None, lengths, stream(config.seed, TEST, rep))
    rows = []
    point = 0
    for p_idx, (name, policy) in enumerate(config.policies):
        masks = policy.masks(pool.lengths, stream(config.seed, POLICY, rep, p_idx))
        labels = [np.where(mk, h, -1) for mk, h in zip(masks, pool.hidden)]
        labeled_pool = pool.with_labels(labels)
        unit_cost = policy_cost(policy, lengths)
        for n in config.ns:
            data = labeled_pool.subset(np.arange(n))
            result = fit_chain(data, _em(config, rep, point))
            est = align_states(result.model, model)
            values = {}
            if "per_sequence_perplexity" in config.metrics:
                if test is None:
                    values["per_sequence_perplexity"] = math.exp(chain_cross_entropy(est, model, lengths))
                else:
                    values["per_sequence_perplexity"] = math.exp(-float(np.mean(log_observed(est, test))))
            if "mse_trace" in config.metrics:
                values["mse_trace"] = float(np.sum(param_error(est, model) ** 2))
            if "cost" in config.metrics:
                values["cost"] = n * unit_cost
            if "log_trace_asym_var" in config.metrics:
                values["log_trace_asym_var"] = math.log(traces[name] / n)
            for metric in config.metrics:
                rows.append(StudyRow("structured", point, n, None, name, None, rep, metric, values[metric]))
            point += 1
    return rows


def run_structured_study(config: StudyConfig) -> StudyResult:
    """Held-out perplexity, parameter error and labeling cost per (policy, n)."""
    if config.kind != "structured":
        raise ConfigError("not a structured study config")
    if config.lengths is None:
        raise ConfigError("structured study needs a length distribution")
    traces = {}
    if "log_trace_asym_var" in config.metrics:
        for name, policy in config.policies:
            rep = asymptotic_report(config.model, policy, config.lengths, "auto", config.variance_samples, stream(config.seed, 9))
            traces[name] = rep.trace_inverse
    parts = _map(lambda rep: _chain_replicate(config, rep, traces), range(config.replicates), config.threads)
    rows = tuple(r for part in parts for r in part)
    grid = [{"point": i * len(config.ns) + j, "policy": name, "n": n}
            for i, (name, _) in enumerate(config.policies) for j, n in enumerate(config.ns)]
    return StudyResult(config, rows, {"grid": grid})


# ---------------------------------------------------------------------------
# two-stage study
# ---------------------------------------------------------------------------


def _default_two_stage_spec(config: StudyConfig) -> TradeoffSpec:
    n = config.pool_size
    return TradeoffSpec(Objective("budget", bound=float(n)), (Candidate(n, lam=config.reference_lambda),))


def _two_stage_replicate(config: StudyConfig, rep: int, truth: float, spec: TradeoffSpec) -> list[StudyRow]:
    model = config.model
    empty = LabelingPolicy.of((EmptySelector(), 1.0))
    pool = sample_from(model, config.pool_size, empty, None, stream(config.seed, TRAIN, rep))
    rows = []
    for point, r in enumerate(config.r_grid):
        plan = two_stage(
            pool, r, spec, _em(config, rep, point), stream(config.seed, STAGE, rep),
            config.reference_lambda, None, "auto", config.variance_samples, model.doc_length,
        )
        rows.append(StudyRow("two_stage", point, config.pool_size, config.reference_lambda, None, r, rep,
                             "trace_abs_error", abs(plan.estimated_trace - truth)))
    return rows


def run_two_stage_study(config: StudyConfig) -> StudyResult:
    """|trace(Sigma) at the plug-in estimate - trace(Sigma) at the truth| per r."""
    if config.kind != "two_stage":
        raise ConfigError("not a two-stage study config")
    truth, truth_inv, _ = plugin_traces(config.model, config.reference_lambda, None, "auto", config.variance_samples)
    spec = config.tradeoff or _default_two_stage_spec(config)
    parts = _map(lambda rep: _two_stage_replicate(config, rep, truth, spec), range(config.replicates), config.threads)
    rows = tuple(r for part in parts for r in part)
    res = StudyResult(config, rows, {"true_trace": truth, "true_trace_inverse": truth_inv})
    quart = {}
    for a in res.aggregates():
        quart[str(a["r"])] = {"q1": a["q1"], "median": a["median"], "q3": a["q3"]}
    res.annotations["quartiles_by_r"] = quart
    return res


def run_study(config: StudyConfig) -> StudyResult:
    return {
        "classification": run_classification_study,
        "region": run_region_study,
        "structured": run_structured_study,
        "two_stage": run_two_stage_study,
    }[config.kind](config)

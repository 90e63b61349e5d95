"""Accuracy-cost tradeoff over a finite grid of labeling designs.

A candidate is a labeled fraction or a structured policy together with a
sample size n. Its finite-n error proxy is ``trace(Sigma^-1) / n`` and its
cost defaults to the expected number of labels, ``lam * n`` or
``n * policy_cost``. Three objectives are supported: minimum error under a
cost budget, minimum cost under an error bound, and cost plus a weighted
error penalty.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .asymptotics import asymptotic_report, enumerable, sigma_classification
from .core import ConfigError, DataError, DocumentSet, SequenceSet
from .estimation import EmConfig, fit
from .models import ChainModel, Model, NaiveBayesModel
from .policy import LabelingPolicy, LengthDistribution, policy_cost

OBJECTIVES = ("budget", "accuracy", "penalized")


@dataclass(frozen=True)
class Candidate:
    n: int
    lam: float | None = None
    policy: LabelingPolicy | None = None
    name: str = ""

    def __post_init__(self):
        if (self.lam is None) == (self.policy is None):
            raise ConfigError("a candidate needs exactly one of lam or policy")
        if self.n < 1:
            raise ConfigError("candidate sample size must be positive")

    @property
    def design(self):
        return self.lam if self.policy is None else self.policy

    def label(self) -> str:
        if self.name:
            return self.name
        return f"lam={self.lam!r},n={self.n}" if self.policy is None else f"policy,n={self.n}"


@dataclass(frozen=True)
class Objective:
    kind: str
    bound: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.kind!r}")
        if self.kind in ("budget", "accuracy") and not (self.bound is not None and self.bound > 0):
            raise ConfigError(f"{self.kind} objective needs a positive bound")
        if self.kind == "penalized" and not (self.alpha is not None and self.alpha > 0):
            raise ConfigError("penalized objective needs a positive alpha")

    def describe(self) -> str:
        if self.kind == "budget":
            return f"cost <= {self.bound!r}"
        if self.kind == "accuracy":
            return f"error <= {self.bound!r}"
        return f"cost + {self.alpha!r} * error"


@dataclass(frozen=True)
class TradeoffSpec:
    objective: Objective
    candidates: tuple[Candidate, ...]
    lengths: LengthDistribution | None = None
    cost_fn: Callable[[Candidate], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.candidates:
            raise ConfigError("tradeoff grid is empty")
        object.__setattr__(self, "candidates", tuple(self.candidates))

    def cost(self, cand: Candidate) -> float:
        if self.cost_fn is not None:
            return float(self.cost_fn(cand))
        if cand.policy is None:
            return cand.lam * cand.n
        if self.lengths is None:
            raise ConfigError("policy candidates need a length distribution to price them")
        return cand.n * policy_cost(cand.policy, self.lengths)

    @classmethod
    def grid(cls, objective: Objective, lambdas: Sequence[float], ns: Sequence[int]) -> "TradeoffSpec":
        cands = tuple(Candidate(int(n), lam=float(l)) for l in lambdas for n in ns)
        return cls(objective, cands)


@dataclass(frozen=True)
class CandidateRow:
    index: int
    candidate: Candidate
    cost: float
    trace_inverse: float
    error: float
    feasible: bool
    objective_value: float
    on_frontier: bool = False


@dataclass(frozen=True)
class TradeoffSolution:
    objective: Objective
    rows: tuple[CandidateRow, ...]
    chosen: CandidateRow | None
    binding_constraint: str | None = None

    @property
    def feasible(self) -> bool:
        return self.chosen is not None

    @property
    def objective_value(self) -> float | None:
        return None if self.chosen is None else self.chosen.objective_value

    def to_dict(self) -> dict:
        return {
            "objective": {"kind": self.objective.kind, "bound": self.objective.bound, "alpha": self.objective.alpha},
            "feasible": self.feasible,
            "binding_constraint": self.binding_constraint,
            "chosen": None if self.chosen is None else _row_dict(self.chosen),
            "candidates": [_row_dict(r) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "candidate", "n", "lam", "cost", "trace_inverse", "error", "feasible", "objective_value", "on_frontier", "chosen"])
        for r in self.rows:
            w.writerow([
                r.index, r.candidate.label(), r.candidate.n,
                "" if r.candidate.lam is None else repr(r.candidate.lam),
                repr(r.cost), repr(r.trace_inverse), repr(r.error), int(r.feasible),
                repr(r.objective_value), int(r.on_frontier),
                int(self.chosen is not None and self.chosen.index == r.index),
            ])
        return buf.getvalue()


def _num(x: float):
    return x if math.isfinite(x) else None


def _row_dict(r: CandidateRow) -> dict:
    c = r.candidate
    d = {"index": r.index, "label": c.label(), "n": c.n}
    if c.policy is None:
        d["lam"] = c.lam
    else:
        d["policy"] = c.policy.to_config()
    d.update(
        cost=r.cost,
        trace_inverse=_num(r.trace_inverse),
        error=_num(r.error),
        feasible=r.feasible,
        objective_value=_num(r.objective_value),
        on_frontier=r.on_frontier,
    )
    return d


def frontier(points: Sequence[tuple[float, float]]) -> tuple[list[int], list[int]]:
    """Split (cost, error) points into Pareto-minimal and dominated index lists.

    A point is dominated when another is no worse in both coordinates and
    strictly better in one. Both lists are ordered by cost, then error, then
    input order.
    """
    order = sorted(range(len(points)), key=lambda i: (points[i][0], points[i][1], i))
    front, dominated = [], []
    best_before = math.inf  # lowest error among strictly cheaper points
    k = 0
    while k < len(order):
        cost = points[order[k]][0]
        group = []
        while k < len(order) and points[order[k]][0] == cost:
            group.append(order[k])
            k += 1
        group_min = min(points[i][1] for i in group)
        for i in group:
            err = points[i][1]
            if best_before <= err or group_min < err:
                dominated.append(i)
            else:
                front.append(i)
        best_before = min(best_before, group_min)
    return front, dominated


def solve_tradeoff(spec: TradeoffSpec, variance_oracle: Callable[[Candidate], float]) -> TradeoffSolution:
    """Exact grid search; ``variance_oracle`` maps a candidate to trace(Sigma^-1).

    The oracle is called once per distinct design (lam or policy), since the
    trace does not depend on n. Ties go to lower cost, then lower error,
    then grid order.
    """
    obj = spec.objective
    cache: dict = {}
    raw = []
    for i, cand in enumerate(spec.candidates):
        key = cand.design
        if key not in cache:
            cache[key] = float(variance_oracle(cand))
        tr = cache[key]
        cost = spec.cost(cand)
        err = tr / cand.n
        if obj.kind == "budget":
            feasible, value = cost <= obj.bound, err
        elif obj.kind == "accuracy":
            feasible, value = err <= obj.bound, cost
        else:
            feasible, value = math.isfinite(err), cost + obj.alpha * err
        raw.append((i, cand, cost, tr, err, feasible, value))
    front, _ = frontier([(r[2], r[4]) for r in raw])
    front = set(front)
    rows = tuple(CandidateRow(*r, on_frontier=r[0] in front) for r in raw)
    feasible = [r for r in rows if r.feasible]
    if not feasible:
        return TradeoffSolution(obj, rows, None, obj.describe())
    chosen = min(feasible, key=lambda r: (r.objective_value, r.cost, r.error, r.index))
    return TradeoffSolution(obj, rows, chosen)


# ---------------------------------------------------------------------------
# variance oracles and the two-stage plan
# ---------------------------------------------------------------------------


def model_variance_oracle(model: Model, lengths=None, method="auto", n_samples=100_000, seed=0):
    """trace(Sigma^-1) at ``model`` for each candidate's design."""

    def oracle(cand: Candidate) -> float:
        rng = np.random.default_rng(seed)
        m = method
        if m == "auto":
            m = "enumeration" if enumerable(model, lengths) else "montecarlo"
        if cand.policy is None:
            if isinstance(model, NaiveBayesModel):
                rep = sigma_classification(model, cand.lam, m, n_samples, rng, lengths)
            else:
                rep = asymptotic_report(model, LabelingPolicy.all_or_nothing(cand.lam), lengths, m, n_samples, rng)
        else:
            rep = asymptotic_report(model, cand.policy, lengths, m, n_samples, rng)
        return rep.trace_inverse

    return oracle


@dataclass(frozen=True, eq=False)
class TwoStagePlan:
    r: int
    pool_size: int
    estimate: Model
    reference_lambda: float
    estimated_trace: float
    estimated_trace_inverse: float
    solution: TradeoffSolution
    additional_labels: float | None
    diagnostics: dict

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "pool_size": self.pool_size,
            "reference_lambda": self.reference_lambda,
            "estimated_trace": self.estimated_trace,
            "estimated_trace_inverse": _num(self.estimated_trace_inverse),
            "estimate": {k: v.tolist() for k, v in self.estimate.probabilities().items()},
            "additional_labels": self.additional_labels,
            "solution": self.solution.to_dict(),
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def reveal(pool, idx):
    """Copy of ``pool`` whose revealed labels are exactly the hidden truth at ``idx``."""
    if pool.hidden is None:
        raise DataError("pool carries no withheld labels to reveal")
    if isinstance(pool, DocumentSet):
        labels = np.full(len(pool), -1, dtype=np.int64)
        labels[idx] = pool.hidden[idx]
        return pool.with_labels(labels)
    chosen = set(int(i) for i in idx)
    labels = [h if i in chosen else np.full(len(h), -1) for i, h in enumerate(pool.hidden)]
    return pool.with_labels(labels)


def plugin_traces(model: Model, lam: float, lengths=None, method="auto", n_samples=100_000, seed=0):
    """(trace(Sigma), trace(Sigma^-1)) of the all-or-nothing design with fraction ``lam``."""
    rng = np.random.default_rng(seed)
    if isinstance(model, NaiveBayesModel):
        m = method if method != "auto" else ("enumeration" if enumerable(model, lengths) else "montecarlo")
        rep = sigma_classification(model, lam, m, n_samples, rng, lengths)
    else:
        rep = asymptotic_report(model, LabelingPolicy.all_or_nothing(lam), lengths, method, n_samples, rng)
    return rep.trace_sigma, rep.trace_inverse, rep


def two_stage(
    pool,
    r: int,
    spec: TradeoffSpec,
    config: EmConfig | None = None,
    rng: np.random.Generator | None = None,
    reference_lambda: float = 0.5,
    lengths: LengthDistribution | None = None,
    method: str = "auto",
    n_samples: int = 100_000,
    doc_length: int | None = None,
) -> TwoStagePlan:
    """Label r random pool samples, fit a plug-in model, then solve the tradeoff at it.

    Stage-1 labels count toward the final cost: ``additional_labels`` is the
    chosen candidate's cost minus r (never negative).
    """
    if r < 1 or r > len(pool):
        raise ConfigError("r must satisfy 1 <= r <= pool size")
    if pool.hidden is None:
        raise DataError("pool carries no withheld labels to reveal")
    if spec.objective.kind == "budget" and r > spec.objective.bound:
        raise ConfigError("initial label count r exceeds the labeling budget")
    rng = np.random.default_rng() if rng is None else rng
    idx = np.sort(rng.permutation(len(pool))[:r])
    partial = reveal(pool, idx)
    result = fit(partial, config, doc_length=doc_length)
    plug = result.model
    tr, tr_inv, rep = plugin_traces(plug, reference_lambda, lengths, method, n_samples)
    solution = solve_tradeoff(spec, model_variance_oracle(plug, lengths, method, n_samples))
    extra = None if solution.chosen is None else max(solution.chosen.cost - r, 0.0)
    diag = {
        "variance_method": rep.method,
        "fit_log_likelihood": result.log_likelihood,
        "fit_iterations": result.iterations,
        "fit_converged": result.converged,
        "max_standard_error": None if rep.standard_errors is None else float(rep.standard_errors.max()),
    }
    return TwoStagePlan(r, len(pool), plug, reference_lambda, tr, tr_inv, solution, extra, diag)

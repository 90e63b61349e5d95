"""Labeling policies as mixtures of label-subset selectors, and length distributions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ConfigError, LabelObservation


class Selector:
    """Maps a sequence length m to the positions (0-based) that get labeled."""

    name = "selector"
    deterministic = True

    def positions(self, m: int) -> np.ndarray:
        raise NotImplementedError

    def subsets(self, m: int) -> list[tuple[np.ndarray, float]]:
        """All position sets this selector can produce on length m, with probabilities."""
        return [(self.positions(m), 1.0)]

    def masks(self, m: int, size: int, rng: np.random.Generator | None = None) -> np.ndarray:
        mask = np.zeros(m, dtype=bool)
        mask[self.positions(m)] = True
        return np.broadcast_to(mask, (size, m)).copy()

    def to_config(self) -> dict:
        return {"selector": self.name}


class FullSelector(Selector):
    name = "full"

    def positions(self, m):
        return np.arange(m)

    def __eq__(self, other):
        return type(other) is FullSelector

    def __hash__(self):
        return hash(self.name)


class EmptySelector(Selector):
    name = "empty"

    def positions(self, m):
        return np.zeros(0, dtype=np.int64)

    def __eq__(self, other):
        return type(other) is EmptySelector

    def __hash__(self):
        return hash(self.name)


@dataclass(frozen=True)
class PrefixFraction(Selector):
    """Label the first floor(fraction * m) positions."""

    fraction: float
    name = "prefix_fraction"

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigError("prefix fraction must lie in [0, 1]")

    def positions(self, m):
        return np.arange(int(np.floor(self.fraction * m)))

    def to_config(self):
        return {"selector": self.name, "fraction": self.fraction}


@dataclass(frozen=True)
class ContiguousWindow(Selector):
    """A window of ``length`` consecutive labeled positions.

    ``placement="prefix"`` starts the window at the first position. The
    ``"random"`` variant draws the start uniformly, which makes the selector
    itself stochastic; :meth:`subsets` expands it into the equivalent
    mixture over start offsets. Windows longer than the sequence are clipped.
    """

    length: int
    placement: str = "prefix"
    name = "window"

    def __post_init__(self):
        if self.length < 0:
            raise ConfigError("window length must be non-negative")
        if self.placement not in ("prefix", "random"):
            raise ConfigError(f"unknown window placement {self.placement!r}")

    @property
    def deterministic(self):
        return self.placement == "prefix"

    def positions(self, m):
        if self.placement == "random":
            raise ConfigError("a randomly placed window has no single position set")
        return np.arange(min(self.length, m))

    def subsets(self, m):
        w = min(self.length, m)
        if self.placement == "prefix":
            return [(np.arange(w), 1.0)]
        n_starts = m - w + 1
        return [(np.arange(s, s + w), 1.0 / n_starts) for s in range(n_starts)]

    def masks(self, m, size, rng=None):
        if self.placement == "prefix":
            return super().masks(m, size)
        if rng is None:
            raise ConfigError("a randomly placed window needs a random generator")
        w = min(self.length, m)
        starts = rng.integers(0, m - w + 1, size=size)
        idx = np.arange(m)
        return (idx >= starts[:, None]) & (idx < starts[:, None] + w)

    def to_config(self):
        return {"selector": self.name, "length": self.length, "placement": self.placement}


@dataclass(frozen=True)
class ExplicitIndexSet(Selector):
    """Explicit 0-based positions for each supported sequence length."""

    by_length: tuple[tuple[int, tuple[int, ...]], ...]
    name = "explicit"

    def __init__(self, by_length):
        items = by_length.items() if isinstance(by_length, dict) else by_length
        norm = tuple(sorted((int(m), tuple(sorted({int(i) for i in pos}))) for m, pos in items))
        for m, pos in norm:
            if pos and (pos[0] < 0 or pos[-1] >= m):
                raise ConfigError(f"explicit positions out of range for length {m}")
        object.__setattr__(self, "by_length", norm)

    def positions(self, m):
        for length, pos in self.by_length:
            if length == m:
                return np.array(pos, dtype=np.int64)
        raise ConfigError(f"explicit selector has no position set for length {m}")

    def to_config(self):
        return {"selector": self.name, "positions": {str(m): list(p) for m, p in self.by_length}}


def selector_from_config(cfg: dict) -> Selector:
    kind = cfg.get("selector")
    if kind == "full":
        return FullSelector()
    if kind == "empty":
        return EmptySelector()
    if kind == "prefix_fraction":
        return PrefixFraction(float(cfg["fraction"]))
    if kind == "window":
        return ContiguousWindow(int(cfg["length"]), cfg.get("placement", "prefix"))
    if kind == "explicit":
        return ExplicitIndexSet({int(k): v for k, v in cfg["positions"].items()})
    raise ConfigError(f"unknown selector {kind!r}")


@dataclass(frozen=True)
class LengthDistribution:
    support: tuple[int, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        sup = tuple(int(m) for m in self.support)
        pr = tuple(float(p) for p in self.probabilities)
        if not sup:
            raise ConfigError("length distribution needs a non-empty support")
        if len(sup) != len(pr) or any(m < 1 for m in sup) or any(p < 0 for p in pr):
            raise ConfigError("invalid length distribution")
        if abs(sum(pr) - 1.0) > 1e-12:
            raise ConfigError("length probabilities must sum to 1")
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "probabilities", pr)

    @classmethod
    def fixed(cls, m: int) -> "LengthDistribution":
        return cls((m,), (1.0,))

    @property
    def mean(self) -> float:
        return float(np.dot(self.support, self.probabilities))

    def items(self):
        return [(m, q) for m, q in zip(self.support, self.probabilities) if q > 0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if len(self.support) == 1:
            return np.full(n, self.support[0], dtype=np.int64)
        return rng.choice(np.array(self.support), size=n, p=np.array(self.probabilities))

    def to_config(self) -> dict:
        return {"support": list(self.support), "probabilities": list(self.probabilities)}


@dataclass(frozen=True)
class LabelingPolicy:
    """Mixture of selectors: component j is chosen with probability ``weights[j]``."""

    selectors: tuple[Selector, ...]
    weights: tuple[float, ...]
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sels = tuple(self.selectors)
        w = tuple(float(x) for x in self.weights)
        if not sels:
            raise ConfigError("labeling policy has no components")
        if len(sels) != len(w) or any(x < 0 for x in w):
            raise ConfigError("policy weights must be non-negative, one per selector")
        if abs(sum(w) - 1.0) > 1e-12:
            raise ConfigError("policy weights must sum to 1")
        object.__setattr__(self, "selectors", sels)
        object.__setattr__(self, "weights", w)
        cdf = np.cumsum(w)
        cdf[-1] = 1.0
        object.__setattr__(self, "_cdf", cdf)

    @classmethod
    def of(cls, *components: tuple[Selector, float]) -> "LabelingPolicy":
        return cls(tuple(s for s, _ in components), tuple(w for _, w in components))

    @classmethod
    def all_or_nothing(cls, lam: float) -> "LabelingPolicy":
        return cls.of((FullSelector(), lam), (EmptySelector(), 1.0 - lam))

    @classmethod
    def full_empty_half(cls) -> "LabelingPolicy":
        """Whole sequence, nothing, or the first half, each with probability 1/3."""
        third = 1.0 / 3.0
        return cls.of((FullSelector(), third), (EmptySelector(), third), (PrefixFraction(0.5), 1.0 - 2 * third))

    @property
    def components(self) -> list[tuple[Selector, float]]:
        return list(zip(self.selectors, self.weights))

    def choose(self, rng: np.random.Generator, size: int | None = None):
        """Component indices; one uniform draw per decision."""
        u = rng.random(size)
        return np.searchsorted(self._cdf, u, side="right")

    def subsets(self, m: int) -> list[tuple[np.ndarray, float]]:
        """Flattened (positions, probability) pairs over all components on length m."""
        out = []
        for sel, w in self.components:
            if w == 0:
                continue
            for pos, p in sel.subsets(m):
                out.append((pos, w * p))
        return out

    def masks(self, lengths: Sequence[int], rng: np.random.Generator) -> list[np.ndarray]:
        """Boolean observed-position masks for a batch of sequences."""
        lengths = np.asarray(lengths, dtype=np.int64)
        comp = self.choose(rng, len(lengths))
        out: list = [None] * len(lengths)
        for m in np.unique(lengths):
            idx = np.flatnonzero(lengths == m)
            for j, sel in enumerate(self.selectors):
                sub = idx[comp[idx] == j]
                if sub.size == 0:
                    continue
                rows = sel.masks(int(m), sub.size, rng)
                for i, row in zip(sub, rows):
                    out[i] = row
        return out

    def to_config(self) -> dict:
        return {
            "components": [dict(sel.to_config(), weight=w) for sel, w in self.components]
        }


def policy_from_config(cfg: dict) -> LabelingPolicy:
    if "lambda" in cfg:
        return LabelingPolicy.all_or_nothing(float(cfg["lambda"]))
    comps = cfg.get("components")
    if not comps:
        raise ConfigError("policy config needs 'components' or 'lambda'")
    return LabelingPolicy(
        tuple(selector_from_config(c) for c in comps), tuple(float(c["weight"]) for c in comps)
    )


def apply_policy(policy: LabelingPolicy, label_sequence, rng: np.random.Generator) -> LabelObservation:
    """Reveal the labels selected by one randomly chosen policy component."""
    y = np.asarray(label_sequence, dtype=np.int64).reshape(-1)
    if y.size == 0:
        raise ConfigError("label sequence must be non-empty")
    j = int(policy.choose(rng))
    mask = policy.selectors[j].masks(y.size, 1, rng)[0]
    pos = np.flatnonzero(mask)
    return LabelObservation(y.size, tuple(pos), tuple(y[pos]))


def policy_cost(policy: LabelingPolicy, lengths: LengthDistribution) -> float:
    """Expected number of labeled positions per sample."""
    total = 0.0
    for m, q in lengths.items():
        total += q * sum(p * len(pos) for pos, p in policy.subsets(m))
    return total

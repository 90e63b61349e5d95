"""Shared value types: parameter vectors, label observations and datasets.

Every probability simplex is parameterized by multinomial logits with the
last category as the zero-logit reference, so a block of ``rows`` simplices
over ``categories`` outcomes contributes ``rows * (categories - 1)`` free
coordinates to the parameter vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration or usage (CLI exit code 1)."""


class DataError(ValueError):
    """Malformed or inconsistent input data (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """A numerical routine failed or violated its contract (CLI exit code 3)."""


class EnumerationError(ConfigError):
    """Exact enumeration was requested on an outcome space that is too large."""


# ---------------------------------------------------------------------------
# parameter vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Block:
    name: str
    rows: int
    categories: int

    @property
    def size(self) -> int:
        return self.rows * (self.categories - 1)


@dataclass(frozen=True)
class Layout:
    """Ordered named blocks of simplices making up a model's parameter vector."""

    family: str
    blocks: tuple[Block, ...]

    @property
    def dim(self) -> int:
        return sum(b.size for b in self.blocks)

    def slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for b in self.blocks:
            out[b.name] = slice(start, start + b.size)
            start += b.size
        return out

    def block(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Probabilities from reference-coded logits of shape (rows, categories - 1)."""
    full = np.concatenate([logits, np.zeros((logits.shape[0], 1))], axis=1)
    full = full - full.max(axis=1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=1, keepdims=True)


def logit_rows(probs: np.ndarray) -> np.ndarray:
    logp = np.log(probs)
    return logp[:, :-1] - logp[:, -1:]


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Unconstrained parameter vector together with its block layout."""

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.shape[0] != self.layout.dim:
            raise ConfigError(
                f"parameter vector has dimension {v.shape[0]}, layout expects {self.layout.dim}"
            )
        if not np.all(np.isfinite(v)):
            raise NumericalError("parameter vector has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.layout.dim

    def to_probabilities(self) -> dict[str, np.ndarray]:
        out = {}
        for b, sl in zip(self.layout.blocks, self.layout.slices().values()):
            out[b.name] = softmax_rows(self.values[sl].reshape(b.rows, b.categories - 1))
        return out

    @classmethod
    def from_probabilities(cls, layout: Layout, probs: Mapping[str, np.ndarray]) -> "ParamVector":
        parts = []
        for b in layout.blocks:
            p = np.asarray(probs[b.name], dtype=float).reshape(b.rows, b.categories)
            if np.any(p <= 0):
                raise NumericalError(f"block {b.name!r} has non-positive probabilities")
            parts.append(logit_rows(p).reshape(-1))
        return cls(np.concatenate(parts) if parts else np.zeros(0), layout)

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    def __sub__(self, other: "ParamVector") -> np.ndarray:
        return self.values - other.values


# ---------------------------------------------------------------------------
# label observations and samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabelObservation:
    """Revealed labels of one sample, canonically a sorted (position, value) set.

    ``Full`` and ``None`` are derived kinds; constructing a subset with every
    position is the same object as a full observation.
    """

    length: int
    positions: tuple[int, ...] = ()
    values: tuple[int, ...] = ()

    def __post_init__(self):
        pos = tuple(int(p) for p in self.positions)
        vals = tuple(int(v) for v in self.values)
        if len(pos) != len(vals):
            raise DataError("positions and values differ in length")
        if self.length < 1:
            raise DataError("label sequence length must be positive")
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise DataError("observed positions must be unique and ascending")
        if pos and (pos[0] < 0 or pos[-1] >= self.length):
            raise DataError("observed position outside the sequence")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "values", vals)

    @property
    def kind(self) -> str:
        if not self.positions:
            return "none"
        if len(self.positions) == self.length:
            return "full"
        return "subset"

    @classmethod
    def full(cls, values: Sequence[int]) -> "LabelObservation":
        return cls(len(values), tuple(range(len(values))), tuple(values))

    @classmethod
    def none(cls, length: int = 1) -> "LabelObservation":
        return cls(length)

    @classmethod
    def from_array(cls, labels: np.ndarray) -> "LabelObservation":
        """Build from an int array where -1 marks an unobserved position."""
        labels = np.asarray(labels)
        pos = np.flatnonzero(labels >= 0)
        return cls(len(labels), tuple(pos), tuple(labels[pos]))

    def to_array(self) -> np.ndarray:
        out = np.full(self.length, -1, dtype=np.int64)
        out[list(self.positions)] = self.values
        return out


@dataclass(frozen=True, eq=False)
class Sample:
    """One observation (count vector or token sequence) with its revealed labels."""

    observation: np.ndarray
    labels: LabelObservation


def _frozen(a, dtype=np.int64) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DocumentSet:
    """Bag-of-words documents for classification.

    ``labels`` holds the revealed class (-1 when unlabeled); ``hidden`` holds
    the true classes when they are known but withheld (simulation, or corpora
    shipped with a truth file) and is never read by the estimators.
    """

    counts: np.ndarray
    labels: np.ndarray
    vocab_size: int
    num_classes: int
    hidden: np.ndarray | None = None

    def __post_init__(self):
        counts = _frozen(self.counts).reshape(-1, self.vocab_size)
        labels = _frozen(self.labels).reshape(-1)
        if counts.shape[0] != labels.shape[0]:
            raise DataError("counts and labels disagree on the number of documents")
        if np.any(counts < 0):
            raise DataError("negative term count")
        if np.any(labels >= self.num_classes) or np.any(labels < -1):
            raise DataError("label outside class range")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "labels", labels)
        if self.hidden is not None:
            hidden = _frozen(self.hidden).reshape(-1)
            if hidden.shape != labels.shape:
                raise DataError("hidden labels have the wrong shape")
            if np.any((labels >= 0) & (labels != hidden)):
                raise DataError("revealed labels contradict hidden labels")
            object.__setattr__(self, "hidden", hidden)

    kind = "classification"

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __getitem__(self, i: int) -> Sample:
        y = int(self.labels[i])
        obs = LabelObservation(1, (0,), (y,)) if y >= 0 else LabelObservation(1)
        return Sample(self.counts[i], obs)

    def __iter__(self) -> Iterator[Sample]:
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, DocumentSet):
            return NotImplemented
        same_hidden = (self.hidden is None and other.hidden is None) or (
            self.hidden is not None
            and other.hidden is not None
            and np.array_equal(self.hidden, other.hidden)
        )
        return (
            self.vocab_size == other.vocab_size
            and self.num_classes == other.num_classes
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.labels, other.labels)
            and same_hidden
        )

    @property
    def num_labels(self) -> int:
        return self.num_classes

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.labels >= 0

    def subset(self, idx) -> "DocumentSet":
        idx = np.asarray(idx)
        return DocumentSet(
            self.counts[idx],
            self.labels[idx],
            self.vocab_size,
            self.num_classes,
            None if self.hidden is None else self.hidden[idx],
        )

    def with_labels(self, labels) -> "DocumentSet":
        return DocumentSet(self.counts, labels, self.vocab_size, self.num_classes, self.hidden)


@dataclass(frozen=True, eq=False)
class SequenceSet:
    """Token sequences with partially revealed state labels (-1 = unobserved)."""

    tokens: tuple
    labels: tuple
    vocab_size: int
    num_states: int
    hidden: tuple | None = None

    def __post_init__(self):
        toks = tuple(_frozen(t).reshape(-1) for t in self.tokens)
        labs = tuple(_frozen(y).reshape(-1) for y in self.labels)
        if len(toks) != len(labs):
            raise DataError("tokens and labels disagree on the number of sequences")
        for i, (t, y) in enumerate(zip(toks, labs)):
            if t.shape != y.shape or t.shape[0] == 0:
                raise DataError(f"sequence {i}: empty or mismatched token/label lengths")
            if np.any(t < 0) or np.any(t >= self.vocab_size):
                raise DataError(f"sequence {i}: token outside the observation alphabet")
            if np.any(y >= self.num_states) or np.any(y < -1):
                raise DataError(f"sequence {i}: label outside the state range")
        object.__setattr__(self, "tokens", toks)
        object.__setattr__(self, "labels", labs)
        if self.hidden is not None:
            hid = tuple(_frozen(h).reshape(-1) for h in self.hidden)
            if [h.shape for h in hid] != [y.shape for y in labs]:
                raise DataError("hidden labels have the wrong shape")
            for y, h in zip(labs, hid):
                if np.any((y >= 0) & (y != h)):
                    raise DataError("revealed labels contradict hidden labels")
            object.__setattr__(self, "hidden", hid)

    kind = "sequence"

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.tokens[i], LabelObservation.from_array(self.labels[i]))

    def __iter__(self) -> Iterator[Sample]:
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, SequenceSet):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))

        return (
            self.vocab_size == other.vocab_size
            and self.num_states == other.num_states
            and same(self.tokens, other.tokens)
            and same(self.labels, other.labels)
            and same(self.hidden, other.hidden)
        )

    @property
    def num_labels(self) -> int:
        return self.num_states

    @property
    def lengths(self) -> np.ndarray:
        return np.array([len(t) for t in self.tokens], dtype=np.int64)

    def subset(self, idx) -> "SequenceSet":
        idx = [int(i) for i in np.asarray(idx).reshape(-1)]
        return SequenceSet(
            tuple(self.tokens[i] for i in idx),
            tuple(self.labels[i] for i in idx),
            self.vocab_size,
            self.num_states,
            None if self.hidden is None else tuple(self.hidden[i] for i in idx),
        )

    def with_labels(self, labels) -> "SequenceSet":
        return SequenceSet(self.tokens, tuple(labels), self.vocab_size, self.num_states, self.hidden)


Dataset = DocumentSet | SequenceSet


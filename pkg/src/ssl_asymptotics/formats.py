"""Text formats for corpora, models and configuration files.

Corpora
-------
``bow`` (bag of words), one document per line::

    # vocab_size=5 num_labels=2
    1<TAB>0:3 2:1 4:16
    ?<TAB>1:20

The label is a class index or ``?`` (unlabeled). Terms are ``index:count``
pairs with positive counts; the canonical form lists them in increasing index
order, separated by single spaces. A document without terms is written as
``label<TAB>``.

``conll`` (sequences), one ``token<TAB>label`` line per position and one
blank line between sequences; ``?`` marks an unobserved position.

Both formats start with an optional header line
``# vocab_size=V num_labels=K``; canonical files always carry it. Tokens and
terms are integer indices unless a vocabulary sidecar is given: a UTF-8 file
with one token string per line, where line ``i`` names index ``i``.

When labels are withheld from a simulated corpus, the complete labels go to a
truth sidecar ``<stem>.truth<suffix>`` (``corpus.truth.bow`` for
``corpus.bow``) in the same format as the corpus. Loading
it restores the hidden labels that experiments use as ground truth.

Models
------
::

    family naive_bayes
    doc_length 20
    [prior] 1 2
    0.4 0.6
    [conditional] 2 5
    ...

Each block header gives the block name and its row/column counts; values are
Python ``repr`` floats, so a save/load cycle is bit-exact.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import yaml

from .core import ConfigError, DataError, Dataset, DocumentSet, NumericalError, SequenceSet
from .estimation import EmConfig
from .models import ChainModel, NaiveBayesModel
from .policy import LabelingPolicy, LengthDistribution, policy_from_config
from .tradeoff import Candidate, Objective, TradeoffSpec

FORMATS = ("bow", "conll")
_HEADER = re.compile(r"^# vocab_size=(\d+) num_labels=(\d+)$")
_INT = re.compile(r"^(0|[1-9]\d*)$")


# ---------------------------------------------------------------------------
# vocabulary sidecar
# ---------------------------------------------------------------------------


def load_vocabulary(path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    words = text.split("\n")
    if words and words[-1] == "":
        words.pop()
    seen = {}
    for i, w in enumerate(words):
        if not w or "\t" in w or " " in w or ":" in w:
            raise DataError(f"{path}:{i + 1}: invalid vocabulary entry {w!r}")
        if w in seen:
            raise DataError(f"{path}:{i + 1}: duplicate vocabulary entry {w!r}")
        seen[w] = i
    return words


def save_vocabulary(words, path) -> None:
    Path(path).write_text("".join(f"{w}\n" for w in words), encoding="utf-8")


def truth_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".truth" + p.suffix)


# ---------------------------------------------------------------------------
# corpora
# ---------------------------------------------------------------------------


class _Reader:
    def __init__(self, path, vocabulary):
        self.path = path
        self.index = None if vocabulary is None else {w: i for i, w in enumerate(vocabulary)}

    def fail(self, line: int, reason: str):
        raise DataError(f"{self.path}:{line}: {reason}")

    def label(self, s: str, line: int) -> int:
        if s == "?":
            return -1
        if not _INT.match(s):
            self.fail(line, f"bad label {s!r}")
        return int(s)

    def token(self, s: str, line: int) -> int:
        if self.index is not None:
            if s not in self.index:
                self.fail(line, f"token {s!r} not in vocabulary")
            return self.index[s]
        if not _INT.match(s):
            self.fail(line, f"bad token index {s!r}")
        return int(s)


def _split_header(text: str):
    """(header sizes or None, body lines with 1-based line numbers)."""
    if text and not text.endswith("\n"):
        text += "\n"
    lines = text.split("\n")[:-1]
    sizes = None
    start = 0
    if lines and lines[0].startswith("#"):
        m = _HEADER.match(lines[0])
        if not m:
            return "bad", lines[0]
        sizes = (int(m.group(1)), int(m.group(2)))
        start = 1
    return sizes, [(i + 1, s) for i, s in enumerate(lines) if i >= start]


def _resolve_sizes(path, header, vocab_size, num_labels, max_token, max_label, vocabulary):
    hv, hl = header if header else (None, None)
    if vocabulary is not None:
        if hv is not None and hv != len(vocabulary):
            raise DataError(f"{path}: header vocab_size={hv} but the vocabulary has {len(vocabulary)} entries")
        hv = len(vocabulary) if hv is None else hv
    for name, given, declared in (("vocab_size", vocab_size, hv), ("num_labels", num_labels, hl)):
        if given is not None and declared is not None and given != declared:
            raise DataError(f"{path}: {name}={given} conflicts with the declared {declared}")
    v = vocab_size if vocab_size is not None else hv
    k = num_labels if num_labels is not None else hl
    v = max_token + 1 if v is None else v
    k = max_label + 1 if k is None else k
    return max(v, 0), max(k, 0)


def _load_bow(path, text, vocab_size, num_labels, vocabulary) -> DocumentSet:
    header, lines = _split_header(text)
    if header == "bad":
        raise DataError(f"{path}:1: malformed header {lines!r}")
    rd = _Reader(path, vocabulary)
    docs, labels = [], []
    for ln, s in lines:
        if "\t" not in s:
            rd.fail(ln, "expected 'label<TAB>term:count ...'")
        lab, _, rest = s.partition("\t")
        y = rd.label(lab, ln)
        terms = {}
        for item in rest.split(" ") if rest else []:
            tok, sep, cnt = item.partition(":")
            if not sep or not _INT.match(cnt) or int(cnt) == 0:
                rd.fail(ln, f"bad term entry {item!r}")
            t = rd.token(tok, ln)
            if t in terms:
                rd.fail(ln, f"term {tok!r} listed twice")
            terms[t] = int(cnt)
        docs.append((ln, terms))
        labels.append((ln, y))
    max_t = max((max(t) for _, t in docs if t), default=-1)
    max_y = max((y for _, y in labels), default=-1)
    v, k = _resolve_sizes(path, header, vocab_size, num_labels, max_t, max_y, vocabulary)
    counts = np.zeros((len(docs), v), dtype=np.int64)
    for i, (ln, terms) in enumerate(docs):
        for t, c in terms.items():
            if t >= v:
                rd.fail(ln, f"term index {t} out of range for vocab_size={v}")
            counts[i, t] = c
    y = np.array([lab for _, lab in labels], dtype=np.int64)
    for ln, lab in labels:
        if lab >= k:
            rd.fail(ln, f"label {lab} out of range for num_labels={k}")
    return DocumentSet(counts, y, v, k)


def _load_conll(path, text, vocab_size, num_labels, vocabulary) -> SequenceSet:
    header, lines = _split_header(text)
    if header == "bad":
        raise DataError(f"{path}:1: malformed header {lines!r}")
    rd = _Reader(path, vocabulary)
    seqs, cur = [], []
    for ln, s in lines:
        if s == "":
            if not cur:
                rd.fail(ln, "empty sequence (consecutive blank lines)")
            seqs.append(cur)
            cur = []
            continue
        parts = s.split("\t")
        if len(parts) != 2:
            rd.fail(ln, "expected 'token<TAB>label'")
        cur.append((ln, rd.token(parts[0], ln), rd.label(parts[1], ln)))
    if cur:
        seqs.append(cur)
    max_t = max((t for sq in seqs for _, t, _ in sq), default=-1)
    max_y = max((y for sq in seqs for _, _, y in sq), default=-1)
    v, k = _resolve_sizes(path, header, vocab_size, num_labels, max_t, max_y, vocabulary)
    for sq in seqs:
        for ln, t, y in sq:
            if t >= v:
                rd.fail(ln, f"token index {t} out of range for vocab_size={v}")
            if y >= k:
                rd.fail(ln, f"label {y} out of range for num_labels={k}")
    tokens = tuple(np.array([t for _, t, _ in sq], dtype=np.int64) for sq in seqs)
    labels = tuple(np.array([y for _, _, y in sq], dtype=np.int64) for sq in seqs)
    return SequenceSet(tokens, labels, v, k)


def load_corpus(
    path,
    format: str | None = None,
    vocab_size: int | None = None,
    num_labels: int | None = None,
    vocabulary=None,
    truth=None,
) -> Dataset:
    """Read a corpus file; ``truth`` (path or True for the default sidecar) fills ``hidden``."""
    path = Path(path)
    fmt = format or guess_format(path)
    if fmt not in FORMATS:
        raise ConfigError(f"unknown corpus format {fmt!r}")
    if not path.exists():
        raise ConfigError(f"corpus file not found: {path}")
    if isinstance(vocabulary, (str, Path)):
        vocabulary = load_vocabulary(vocabulary)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"{path}: not valid UTF-8 ({e})") from None
    loader = _load_bow if fmt == "bow" else _load_conll
    data = loader(path, text, vocab_size, num_labels, vocabulary)
    if truth:
        tp = truth_path(path) if truth is True else Path(truth)
        full = load_corpus(tp, fmt, data.vocab_size, data.num_labels, vocabulary)
        data = _attach_truth(data, full, tp)
    return data


def _attach_truth(data, full, tp):
    if len(full) != len(data):
        raise DataError(f"{tp}: truth file has {len(full)} samples, corpus has {len(data)}")
    if isinstance(data, DocumentSet):
        if not np.array_equal(full.counts, data.counts):
            raise DataError(f"{tp}: documents differ from the corpus")
        if np.any(full.labels < 0):
            raise DataError(f"{tp}: truth file contains unlabeled documents")
        return DocumentSet(data.counts, data.labels, data.vocab_size, data.num_classes, full.labels)
    for i, (a, b) in enumerate(zip(data.tokens, full.tokens)):
        if not np.array_equal(a, b):
            raise DataError(f"{tp}: sequence {i + 1} differs from the corpus")
    if any(np.any(lab < 0) for lab in full.labels):
        raise DataError(f"{tp}: truth file contains unobserved positions")
    return SequenceSet(data.tokens, data.labels, data.vocab_size, data.num_states, full.labels)


def guess_format(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in (".bow", ".txt", ".tsv"):
        return "bow"
    if suffix in (".conll", ".seq"):
        return "conll"
    raise ConfigError(f"cannot infer the corpus format of {path}; pass format explicitly")


def _lab(y) -> str:
    return "?" if y < 0 else str(int(y))


def format_corpus(data: Dataset, format: str, vocabulary=None, labels=None) -> str:
    """Canonical text of ``data``; ``labels`` overrides the observed labels."""
    if format not in FORMATS:
        raise ConfigError(f"unknown corpus format {format!r}")
    name = (lambda i: vocabulary[i]) if vocabulary is not None else str
    if format == "bow":
        if not isinstance(data, DocumentSet):
            raise DataError("sequence data cannot be saved in the bow format")
        labs = data.labels if labels is None else labels
        out = [f"# vocab_size={data.vocab_size} num_labels={data.num_classes}\n"]
        for row, y in zip(data.counts, labs):
            nz = np.flatnonzero(row)
            out.append(_lab(y) + "\t" + " ".join(f"{name(int(t))}:{int(row[t])}" for t in nz) + "\n")
        return "".join(out)
    if not isinstance(data, SequenceSet):
        raise DataError("document data cannot be saved in the conll format")
    labs = data.labels if labels is None else labels
    out = [f"# vocab_size={data.vocab_size} num_labels={data.num_states}\n"]
    for i, (tok, lab) in enumerate(zip(data.tokens, labs)):
        if i:
            out.append("\n")
        out.extend(f"{name(int(t))}\t{_lab(y)}\n" for t, y in zip(tok, lab))
    return "".join(out)


def save_corpus(data: Dataset, format: str, path, vocabulary=None, truth: bool = False) -> list[Path]:
    """Write the canonical file (and the truth sidecar when asked); returns written paths."""
    path = Path(path)
    written = [path]
    text = format_corpus(data, format, vocabulary)
    if truth:
        if data.hidden is None:
            raise DataError("dataset carries no complete labels for a truth file")
        tp = truth_path(path)
        tp.write_text(format_corpus(data, format, vocabulary, data.hidden), encoding="utf-8")
        written.append(tp)
    path.write_text(text, encoding="utf-8")
    return written


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


def format_model(model) -> str:
    out = [f"family {model.family}\n"]
    if isinstance(model, NaiveBayesModel):
        out.append(f"doc_length {model.doc_length}\n")
    for name, arr in model.probabilities().items():
        a = np.atleast_2d(arr)
        out.append(f"[{name}] {a.shape[0]} {a.shape[1]}\n")
        out.extend(" ".join(repr(float(x)) for x in row) + "\n" for row in a)
    return "".join(out)


def save_model(model, path) -> None:
    Path(path).write_text(format_model(model), encoding="utf-8")


def parse_model(text: str, source: str = "<model>"):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    meta, blocks = {}, {}
    i = 0
    while i < len(lines):
        s = lines[i]
        if s.startswith("["):
            m = re.match(r"^\[(\w+)\] (\d+) (\d+)$", s)
            if not m:
                raise DataError(f"{source}:{i + 1}: malformed block header {s!r}")
            name, r, c = m.group(1), int(m.group(2)), int(m.group(3))
            rows = []
            for j in range(r):
                ln = i + 2 + j
                if ln > len(lines):
                    raise DataError(f"{source}:{ln}: block [{name}] ends early")
                try:
                    vals = [float(x) for x in lines[ln - 1].split(" ")]
                except ValueError:
                    raise DataError(f"{source}:{ln}: non-numeric entry in block [{name}]") from None
                if len(vals) != c:
                    raise DataError(f"{source}:{ln}: expected {c} values, found {len(vals)}")
                rows.append(vals)
            blocks[name] = np.array(rows, dtype=float)
            i += 1 + r
            continue
        key, _, val = s.partition(" ")
        if not key or not val:
            raise DataError(f"{source}:{i + 1}: expected 'key value' or a block header")
        meta[key] = val
        i += 1
    family = meta.get("family")
    try:
        if family == "naive_bayes":
            return NaiveBayesModel(blocks["prior"][0], blocks["conditional"], int(meta.get("doc_length", 20)))
        if family == "chain":
            return ChainModel(blocks["initial"][0], blocks["transition"], blocks["emission"])
    except KeyError as e:
        raise DataError(f"{source}: missing block {e}") from None
    except (ValueError, ConfigError, NumericalError) as e:
        raise DataError(f"{source}: {e}") from None
    raise DataError(f"{source}: unknown model family {family!r}")


def load_model(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"model file not found: {path}")
    return parse_model(path.read_text(encoding="utf-8"), str(path))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def load_config(path) -> dict:
    """Parse a YAML config; records its directory for resolving relative paths."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML ({e})") from None
    if cfg is None:
        cfg = {}
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    cfg["_base"] = str(path.parent.resolve())
    return cfg


def resolve(cfg: dict, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else Path(cfg.get("_base", ".")) / p


def _section(cfg: dict, key: str, required: bool = True):
    if key not in cfg:
        if required:
            raise ConfigError(f"config is missing the '{key}' section")
        return None
    return cfg[key]


def build_model(cfg: dict, section: dict | None = None):
    """Model from ``{file}``, ``{fixture}``, ``{random}`` or explicit probabilities."""
    from .experiments import standard_chain_fixture, standard_nb_fixture

    m = section if section is not None else _section(cfg, "model")
    if not isinstance(m, dict):
        raise ConfigError("'model' must be a mapping")
    doc_length = int(m.get("doc_length", 20))
    if "file" in m:
        return load_model(resolve(cfg, m["file"]))
    if "fixture" in m:
        seed = int(m.get("seed", 11))
        if m["fixture"] == "standard_nb":
            return standard_nb_fixture(seed, doc_length)
        if m["fixture"] == "standard_chain":
            return standard_chain_fixture(seed)
        raise ConfigError(f"unknown fixture {m['fixture']!r}")
    family = m.get("family")
    try:
        if "random" in m:
            r = m["random"]
            rng = np.random.default_rng(int(r.get("seed", 0)))
            conc = float(r.get("concentration", 2.0))
            if family == "naive_bayes":
                return NaiveBayesModel.random(int(r["classes"]), int(r["vocab_size"]), rng, conc, doc_length)
            if family == "chain":
                return ChainModel.random(int(r["states"]), int(r["vocab_size"]), rng, conc)
        elif family == "naive_bayes":
            return NaiveBayesModel(np.array(m["prior"], float), np.array(m["conditional"], float), doc_length)
        elif family == "chain":
            return ChainModel(np.array(m["initial"], float), np.array(m["transition"], float),
                              np.array(m["emission"], float))
    except KeyError as e:
        raise ConfigError(f"model config is missing {e}") from None
    raise ConfigError(f"model config needs 'file', 'fixture' or a known family, got {family!r}")


def build_lengths(cfg: dict, section=None) -> LengthDistribution | None:
    s = section if section is not None else cfg.get("lengths")
    if s is None:
        return None
    if isinstance(s, int):
        return LengthDistribution.fixed(s)
    if "fixed" in s:
        return LengthDistribution.fixed(int(s["fixed"]))
    try:
        return LengthDistribution(tuple(int(x) for x in s["support"]), tuple(float(x) for x in s["probabilities"]))
    except KeyError as e:
        raise ConfigError(f"lengths config is missing {e}") from None


def build_policy(cfg: dict, section=None) -> LabelingPolicy:
    s = section if section is not None else _section(cfg, "policy")
    if not isinstance(s, dict):
        raise ConfigError("'policy' must be a mapping")
    try:
        return policy_from_config(s)
    except KeyError as e:
        raise ConfigError(f"policy config is missing {e}") from None


def build_em(cfg: dict) -> EmConfig:
    return EmConfig.from_dict(cfg.get("em"))


def build_objective(s: dict) -> Objective:
    if not isinstance(s, dict) or "kind" not in s:
        raise ConfigError("objective needs a 'kind' (budget, accuracy or penalized)")
    return Objective(s["kind"], s.get("bound"), s.get("alpha"))


def build_tradeoff(cfg: dict, section=None) -> TradeoffSpec:
    """Grid ``{lambdas, ns}`` and/or explicit ``candidates`` plus an ``objective``."""
    s = section if section is not None else _section(cfg, "tradeoff")
    objective = build_objective(s.get("objective"))
    lengths = build_lengths(cfg, s.get("lengths")) if "lengths" in s else build_lengths(cfg)
    cands = []
    if "lambdas" in s or "ns" in s:
        if not s.get("lambdas") or not s.get("ns"):
            raise ConfigError("a tradeoff grid needs both 'lambdas' and 'ns'")
        cands.extend(Candidate(int(n), lam=float(l)) for l in s["lambdas"] for n in s["ns"])
    for c in s.get("candidates", []):
        if "policy" in c:
            cands.append(Candidate(int(c["n"]), policy=build_policy(cfg, c["policy"]), name=str(c.get("name", ""))))
        else:
            cands.append(Candidate(int(c["n"]), lam=float(c["lambda"]), name=str(c.get("name", ""))))
    if not cands:
        raise ConfigError("tradeoff config has no candidates")
    return TradeoffSpec(objective, tuple(cands), lengths)


def build_study(cfg: dict, seed: int | None = None, threads: int = 1):
    from .experiments import StudyConfig

    s = _section(cfg, "study")
    if not isinstance(s, dict):
        raise ConfigError("'study' must be a mapping")
    kind = s.get("kind")
    model = build_model(cfg)
    policies = tuple((str(p["name"]), build_policy(cfg, p)) for p in s.get("policies", []))
    tradeoff = build_tradeoff(cfg, s["tradeoff"]) if "tradeoff" in s else None
    em = EmConfig.from_dict({"restarts": 1, **(cfg.get("em") or {})})
    keys = dict(
        ns=tuple(s.get("ns", ())),
        lambdas=tuple(s.get("lambdas", ())),
        policies=policies,
        lengths=build_lengths(cfg),
        replicates=int(s.get("replicates", 1)),
        metrics=tuple(s.get("metrics", ())),
        seed=int(seed if seed is not None else cfg.get("seed", 0)),
        em=em,
        r_grid=tuple(int(r) for r in s.get("r_grid", ())),
        tradeoff=tradeoff,
        threads=threads,
    )
    for opt, conv in (("test_size", int), ("pool_size", int), ("reference_lambda", float),
                      ("variance_samples", int), ("holdout", str)):
        if opt in s:
            keys[opt] = conv(s[opt])
    return StudyConfig(kind, model, **keys)

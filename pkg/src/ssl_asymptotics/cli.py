"""Command-line entry point: ``ssl-asymptotics <subcommand> --config FILE --out DIR``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure, 4 tradeoff infeasible (the solution JSON is still
written).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats
from .asymptotics import asymptotic_report
from .core import ConfigError, DataError, DocumentSet, NumericalError
from .estimation import fit
from .experiments import POLICY, STAGE, TRAIN, run_study, stream
from .models import NaiveBayesModel, sample_from
from .policy import EmptySelector, LabelingPolicy
from .tradeoff import model_variance_oracle, solve_tradeoff, two_stage

log = logging.getLogger("ssl_asymptotics")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_INFEASIBLE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _write(out: Path, name: str, text: str) -> Path:
    p = out / name
    p.write_text(text, encoding="utf-8")
    log.info("wrote %s", p)
    return p


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _seed(args, cfg) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    log.info("seed %d", seed)
    return seed


def _variance_settings(cfg):
    v = cfg.get("variance") or {}
    return v.get("method", "auto"), int(v.get("n_samples", 100_000))


def cmd_simulate(args, cfg, out: Path) -> int:
    seed = _seed(args, cfg)
    s = cfg.get("simulate") or {}
    n = int(s.get("n", 0))
    if n < 1:
        raise ConfigError("simulate.n must be at least 1")
    model = formats.build_model(cfg)
    lengths = formats.build_lengths(cfg)
    policy = formats.build_policy(cfg) if "policy" in cfg else None
    fmt = s.get("format", "bow" if isinstance(model, NaiveBayesModel) else "conll")
    name = s.get("name", "corpus")
    data = sample_from(model, n, policy, lengths, stream(seed, TRAIN))
    files = formats.save_corpus(data, fmt, out / f"{name}.{fmt}", truth=bool(s.get("truth", True)))
    formats.save_model(model, out / "model.txt")
    manifest = {
        "command": "simulate",
        "seed": seed,
        "n": n,
        "format": fmt,
        "labeled": int(sum(np.sum(np.atleast_1d(y) >= 0) > 0 for y in data.labels)),
        "files": [p.name for p in files] + ["model.txt"],
    }
    _write(out, "simulate.json", _dump(manifest))
    return EXIT_OK


def _load_corpus_section(cfg):
    c = cfg.get("corpus")
    if not isinstance(c, dict) or "path" not in c:
        raise ConfigError("config needs corpus.path")
    vocab = formats.resolve(cfg, c["vocabulary"]) if "vocabulary" in c else None
    truth = c.get("truth", False)
    if isinstance(truth, str):
        truth = formats.resolve(cfg, truth)
    return formats.load_corpus(
        formats.resolve(cfg, c["path"]), c.get("format"), c.get("vocab_size"), c.get("num_labels"), vocab, truth
    )


def cmd_fit(args, cfg, out: Path) -> int:
    seed = _seed(args, cfg)
    data = _load_corpus_section(cfg)
    em = formats.build_em(cfg)
    if "seed" not in (cfg.get("em") or {}):
        em = em.__class__(**{**em.__dict__, "seed": seed})
    f = cfg.get("fit") or {}
    result = fit(data, em, bool(f.get("allow_unlabeled", False)), f.get("doc_length"))
    d = result.to_dict()
    d.update(command="fit", seed=seed, em=em.__dict__.copy(), n=len(data))
    _write(out, "fit.json", _dump(d))
    formats.save_model(result.model, out / "estimate.txt")
    return EXIT_OK


def cmd_variance(args, cfg, out: Path) -> int:
    seed = _seed(args, cfg)
    model = formats.build_model(cfg)
    lengths = formats.build_lengths(cfg)
    policy = formats.build_policy(cfg)
    method, n_samples = _variance_settings(cfg)
    rng = stream(seed, POLICY)
    rep = asymptotic_report(model, policy, lengths, method, n_samples, rng)
    if rep.rank_deficient:
        log.warning("Sigma is rank deficient: the inverse is not reported")
    d = rep.to_dict()
    d.update(command="variance", seed=seed, family=model.family, policy=policy.to_config())
    _write(out, "variance.json", _dump(d))
    return EXIT_OK


def _tradeoff_outputs(out: Path, solution, extra: dict) -> int:
    d = solution.to_dict()
    d.update(extra)
    _write(out, "tradeoff.json", _dump(d))
    _write(out, "tradeoff.csv", solution.to_csv())
    if not solution.feasible:
        log.warning("no candidate satisfies the constraint (%s)", solution.binding_constraint)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_tradeoff(args, cfg, out: Path) -> int:
    seed = _seed(args, cfg)
    model = formats.build_model(cfg)
    spec = formats.build_tradeoff(cfg)
    method, n_samples = _variance_settings(cfg)
    solution = solve_tradeoff(spec, model_variance_oracle(model, spec.lengths, method, n_samples, seed))
    return _tradeoff_outputs(out, solution, {"command": "tradeoff", "seed": seed})


def cmd_two_stage(args, cfg, out: Path) -> int:
    seed = _seed(args, cfg)
    s = cfg.get("two_stage") or {}
    if "r" not in s:
        raise ConfigError("config needs two_stage.r")
    lengths = formats.build_lengths(cfg)
    if "corpus" in cfg:
        pool = _load_corpus_section(cfg)
    else:
        model = formats.build_model(cfg)
        size = int(s.get("pool_size", 2000))
        empty = LabelingPolicy.of((EmptySelector(), 1.0))
        pool = sample_from(model, size, empty, lengths, stream(seed, TRAIN))
    spec = formats.build_tradeoff(cfg)
    method, n_samples = _variance_settings(cfg)
    em = formats.build_em(cfg)
    doc_length = s.get("doc_length")
    if doc_length is None and isinstance(pool, DocumentSet) and "model" in cfg:
        doc_length = getattr(formats.build_model(cfg), "doc_length", None)
    plan = two_stage(pool, int(s["r"]), spec, em, stream(seed, STAGE), float(s.get("reference_lambda", 0.5)),
                     lengths, method, n_samples, doc_length)
    d = plan.to_dict()
    d.update(command="two-stage", seed=seed)
    _write(out, "two_stage.json", _dump(d))
    _write(out, "tradeoff.csv", plan.solution.to_csv())
    if not plan.solution.feasible:
        log.warning("no candidate satisfies the constraint (%s)", plan.solution.binding_constraint)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_study(args, cfg, out: Path) -> int:
    seed = _seed(args, cfg)
    config = formats.build_study(cfg, seed, args.threads)
    result = run_study(config)
    _write(out, "study.csv", result.to_csv())
    _write(out, "study.json", result.to_json() + "\n")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "variance": cmd_variance,
    "tradeoff": cmd_tradeoff,
    "two-stage": cmd_two_stage,
    "study": cmd_study,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ssl-asymptotics", description="Semi-supervised estimation under stochastic labeling policies.")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", required=True, metavar="PATH", help="YAML config file")
        c.add_argument("--out", required=True, metavar="DIR", help="output directory")
        c.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        c.add_argument("--threads", type=int, default=1, help="worker threads for replicate studies")
        c.add_argument("--verbose", "-v", action="count", default=0)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s: %(message)s", stream=sys.stderr
    )
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = formats.load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

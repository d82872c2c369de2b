"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .nmt.checkpoint import FORMAT_VERSION as CKPT_FORMAT
from .tokenizer import normalize_whitespace
from .vocab import FORMAT_VERSION as VOCAB_FORMAT

logger = logging.getLogger("convfix")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class DomainError(Exception):
    """A stage failed for a reason other than bad usage."""


# -- shared data helpers ------------------------------------------------------

def _encode_pairs(pairs, src_vocab, trg_vocab, max_positions):
    from .tokenizer import get_profile, tokenize

    out = []
    for p in pairs:
        profile = get_profile(p.language)
        src = src_vocab.encode(tokenize(p.buggy, profile, abstract=True))
        trg = trg_vocab.encode(tokenize(p.fixed, profile, abstract=True))
        if src and len(src) <= max_positions and len(trg) + 1 <= max_positions:
            out.append((src, trg))
    return out


def split_pairs(pairs, valid_fraction: float, seed: int):
    """Deterministic train/validation split ordered by pair id."""
    ordered = sorted(pairs, key=lambda p: p.id)
    perm = np.random.default_rng(seed).permutation(len(ordered))
    n_valid = int(round(len(ordered) * valid_fraction))
    if len(ordered) > 1:
        n_valid = min(max(n_valid, 1), len(ordered) - 1)
    valid = [ordered[i] for i in sorted(perm[:n_valid])]
    train = [ordered[i] for i in sorted(perm[n_valid:])]
    return train, valid


def _trial_data(args):
    from .ensemble import TrialData
    from .miner import read_jsonl
    from .vocab import Vocabulary

    vocab_dir = Path(args.vocab_dir)
    src_vocab = Vocabulary.load(vocab_dir / "src.vocab")
    trg_vocab = Vocabulary.load(vocab_dir / "trg.vocab")
    pairs = read_jsonl(args.data)
    train, valid = split_pairs(pairs, args.valid_fraction, args.seed)
    data = TrialData(
        _encode_pairs(train, src_vocab, trg_vocab, args.max_positions),
        _encode_pairs(valid, src_vocab, trg_vocab, args.max_positions),
        len(src_vocab), len(trg_vocab), args.max_positions, args.batch_size,
    )
    if not data.train:
        raise DomainError("no usable training pairs")
    return data, src_vocab, trg_vocab


# -- subcommands --------------------------------------------------------------

def cmd_mine(args) -> int:
    from .miner import load_benchmark_fixes, mine, write_jsonl

    bench = load_benchmark_fixes(args.benchmark) if args.benchmark else set()
    pairs = mine(args.repos, args.language, bench, args.workers)
    n = write_jsonl(pairs, args.out)
    print(f"wrote {n} pairs to {args.out}")
    return EXIT_OK


def cmd_tokenize(args) -> int:
    from .tokenizer import get_profile, tokenize

    profile = get_profile(args.language)
    table_path = args.table or (f"{args.output}.table.jsonl" if args.output and args.abstract else None)
    src = sys.stdin if args.input in (None, "-") else open(args.input, encoding="utf-8")
    dst = sys.stdout if args.output in (None, "-") else open(args.output, "w", encoding="utf-8")
    table = open(table_path, "w", encoding="utf-8") if table_path else None
    try:
        for line in src:
            seq = tokenize(line.rstrip("\n"), profile, abstract=args.abstract)
            dst.write(" ".join(seq.tokens) + "\n")
            if table is not None:
                table.write(json.dumps([list(x) for x in seq.abstraction_table], ensure_ascii=False) + "\n")
    finally:
        for fh in (src, dst, table):
            if fh not in (None, sys.stdin, sys.stdout):
                fh.close()
    return EXIT_OK


def cmd_build_vocab(args) -> int:
    from .miner import read_jsonl
    from .tokenizer import get_profile, tokenize
    from .vocab import build

    pairs = read_jsonl(args.data)
    if args.exclude_validation:
        pairs, _ = split_pairs(pairs, args.valid_fraction, args.seed)
    src = [tokenize(p.buggy, get_profile(p.language), abstract=True) for p in pairs]
    trg = [tokenize(p.fixed, get_profile(p.language), abstract=True) for p in pairs]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpora = (("src", src + trg), ("trg", src + trg)) if args.shared else (("src", src), ("trg", trg))
    for name, corpus in corpora:
        vocab = build(corpus, args.min_count, args.max_size)
        vocab.save(out / f"{name}.vocab")
        print(f"{name}: {len(vocab)} tokens, fingerprint {vocab.fingerprint[:12]}")
    return EXIT_OK


def _load_space(path):
    from .ensemble import SearchSpace

    if path is None:
        return SearchSpace()
    return SearchSpace.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def cmd_tune(args) -> int:
    from .ensemble import tune, write_report
    from .nmt.checkpoint import ModelCheckpoint

    data, src_vocab, trg_vocab = _trial_data(args)
    if not data.valid:
        raise DomainError("tuning needs at least one validation pair")
    trials, nets = tune(args.budget, data, _load_space(args.space), args.seed, args.workers, keep_networks=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(trials, out / "tuning.jsonl")
    for t in trials:
        stem = f"trial-{t.index:04d}"
        (out / f"{stem}.json").write_text(json.dumps(t.hyper.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
        if t.index in nets:
            ModelCheckpoint.from_network(nets[t.index], src_vocab.fingerprint, trg_vocab.fingerprint,
                                         {"trial": t.index, "epochs": 1}).save(out / f"{stem}.ckpt")
    ok = [t for t in trials if not t.failed]
    print(f"{len(trials)} trials, {len(ok)} succeeded; best perplexity "
          f"{ok[0].perplexity:.4f} (trial {ok[0].index})" if ok else f"{len(trials)} trials, none succeeded")
    return EXIT_OK


def cmd_train(args) -> int:
    from .ensemble import train_model
    from .nmt.checkpoint import ModelCheckpoint
    from .nmt.hyper import HyperParams
    from .nmt.train import TrainConfig, TrainingDiverged

    hyper = HyperParams.from_dict(json.loads(Path(args.trial_config).read_text(encoding="utf-8")))
    data, src_vocab, trg_vocab = _trial_data(args)
    initial = None
    if args.resume_tuned:
        initial = ModelCheckpoint.load(args.resume_tuned).to_network()
        if initial.hyper != hyper:
            raise DomainError("--resume-tuned checkpoint was trained with different hyper-parameters")
    config = TrainConfig(batch_size=args.batch_size, max_epochs=args.max_epochs, patience=args.patience)
    try:
        net, ppl, epochs = train_model(hyper, data, config, initial)
    except TrainingDiverged as exc:
        raise DomainError(f"training diverged: {exc}") from exc
    ModelCheckpoint.from_network(net, src_vocab.fingerprint, trg_vocab.fingerprint,
                                 {"epochs": epochs, "valid_perplexity": ppl}).save(args.out)
    print(f"trained {epochs} epochs, best perplexity {ppl:.4f}; saved {args.out}")
    return EXIT_OK


def _bug(args):
    from .pipeline import BugInstance

    return BugInstance.load(args.project, args.file, args.line, args.language)


def cmd_repair(args) -> int:
    from .pipeline import TestOracle, load_models, repair

    bug = _bug(args)
    models = load_models(args.models)
    oracle = TestOracle.load(args.oracle)
    reference = Path(args.reference_fix).read_text(encoding="utf-8").strip() if args.reference_fix else None
    report = repair(bug, models, oracle, args.beam_width, args.stop_after, args.workers,
                    reference_fix=reference, max_len=args.max_len)
    Path(args.out).write_text(json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    if report.plausible:
        print(f"{len(report.plausible)} plausible patch(es) of {len(report.candidates)} validated; report in {args.out}")
    else:
        print(f"no plausible patch among {len(report.candidates)} candidates; report in {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .pipeline import CandidatePatch, TestOracle, validate

    bug = _bug(args)
    patch = CandidatePatch(args.patch, 0.0)
    verdict = validate(bug, patch, TestOracle.load(args.oracle))
    print(verdict.value + (" (timeout)" if patch.timed_out else ""))
    return EXIT_OK


def cmd_explain(args) -> int:
    from .pipeline import explain, load_models

    models = load_models(args.models)
    chosen = [m for m in models if args.model in (None, m.model_id)]
    if not chosen:
        raise DomainError(f"no model named {args.model!r} in {args.models}")
    tokens = args.patch.split() if args.patch else None
    for p in explain(chosen[0], args.line, args.language, tokens, args.out_dir, args.beam_width):
        print(p)
    return EXIT_OK


SELFTEST_LINES = {
    "java": ["int sum = 0;", "if (mLocale == null) return getDefault();", 'String s = "a b";', "x += arr[i] * 2.5f;"],
    "python": ["for _ in range(10):", "self.max_size = max_size or 70_000", "print(f'{x}')", "return a[1:-1]"],
    "cpp": ["std::vector<int> v{1, 2};", "auto it = m.find(key);", "x = 1'000'000;", "p->next = nullptr;"],
    "javascript": ["const $el = document.getElementById('id');", "let s = `a${b}`;", "i++;", "a === b && c"],
}


def cmd_selftest(args) -> int:
    from .nmt.gradcheck import run_all
    from .tokenizer import detokenize, get_profile, tokenize

    failures = 0
    for language, lines in SELFTEST_LINES.items():
        profile = get_profile(language)
        for line in lines:
            back = detokenize(tokenize(line, profile))
            if _canonical(back) != _canonical(line):
                failures += 1
                print(f"round-trip FAIL [{language}] {line!r} -> {back!r}")
    print(f"tokenizer round-trip: {'ok' if not failures else f'{failures} failures'}")
    for name, err in run_all(args.seed).items():
        limit = 1e-3 if name.startswith("network") else 1e-4
        ok = err < limit
        failures += not ok
        print(f"gradient {name}: {err:.2e} {'ok' if ok else 'FAIL'}")
    return EXIT_OK if not failures else EXIT_FAIL


def _canonical(text: str) -> str:
    """Whitespace-insensitive form that keeps separations between word characters."""
    text = normalize_whitespace(text)
    return re.sub(r"(?<!\w) | (?!\w)", "", text)


# -- parser and configuration -------------------------------------------------

REQUIRED = {
    "mine": ("repos", "language", "out"),
    "build-vocab": ("data", "out_dir"),
    "tune": ("data", "vocab_dir", "out"),
    "train": ("trial_config", "data", "vocab_dir", "out"),
    "repair": ("project", "file", "line", "models", "oracle", "out"),
    "validate": ("project", "file", "line", "patch", "oracle"),
    "explain": ("models", "line", "language", "out_dir"),
}


def _add_split_args(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--valid-fraction", type=float, default=0.1)


def _add_data_args(p):
    p.add_argument("--data", help="bug-fix pairs JSONL")
    p.add_argument("--vocab-dir", help="directory holding src.vocab and trg.vocab")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-positions", type=int, default=256)
    _add_split_args(p)


def _add_bug_args(p):
    p.add_argument("--project")
    p.add_argument("--file")
    p.add_argument("--line", type=int)
    p.add_argument("--language", help="inferred from the file extension when omitted")
    p.add_argument("--oracle", help="oracle.json with build/test commands")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convfix", description="Learned single-line program repair.")
    parser.add_argument("--version", action="version",
                        version=f"convfix {__version__} (checkpoint format {CKPT_FORMAT}, vocabulary format {VOCAB_FORMAT})")
    parser.add_argument("--config", help="INI file; section [<subcommand>] supplies flag defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("mine", help="extract one-line bug-fix pairs from git repositories")
    p.add_argument("--repos", help="directory containing git repositories")
    p.add_argument("--language")
    p.add_argument("--out")
    p.add_argument("--exclude-fixes", "--benchmark", dest="benchmark",
                   help="fixes to exclude (JSONL pairs or one line per fix)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("tokenize", help="tokenize source lines")
    p.add_argument("--language", default="java")
    p.add_argument("--input", help="file to read (default stdin)")
    p.add_argument("--output", help="token file to write (default stdout)")
    p.add_argument("--abstract", action="store_true", help="replace literals with placeholders")
    p.add_argument("--table", help="abstraction-table JSONL (default <output>.table.jsonl with --abstract)")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("build-vocab", help="build source and target vocabularies")
    p.add_argument("--data")
    p.add_argument("--out-dir")
    p.add_argument("--min-count", type=int, default=2)
    p.add_argument("--max-size", type=int, default=70_000)
    p.add_argument("--exclude-validation", action="store_true", help="count only the training split")
    p.add_argument("--shared", action="store_true", help="one vocabulary for both sides")
    _add_split_args(p)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("tune", help="random hyper-parameter search")
    _add_data_args(p)
    p.add_argument("--budget", default="10", help="trial count, or duration such as 90s / 10m / 1h")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--space", help="JSON file overriding search-space bounds")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("train", help="train one configuration until convergence")
    p.add_argument("--trial-config", "--hyper", dest="trial_config", help="trial JSON written by tune")
    _add_data_args(p)
    p.add_argument("--max-epochs", type=int, default=30)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--resume-tuned", help="start from this one-epoch tuning checkpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("repair", help="generate and validate patches for one buggy line")
    _add_bug_args(p)
    p.add_argument("--models", help="directory with *.ckpt and vocabularies")
    p.add_argument("--beam-width", type=int, default=1000)
    p.add_argument("--max-len", type=int, default=100)
    p.add_argument("--stop-after", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--reference-fix", help="file holding the developer fix line")
    p.add_argument("--out")
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("validate", help="validate one hand-written patch")
    _add_bug_args(p)
    p.add_argument("--patch", help="replacement statement")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("explain", help="export attention maps as CSV grids")
    p.add_argument("--models")
    p.add_argument("--model", help="model id (checkpoint stem); default the first")
    p.add_argument("--line", help="buggy source line")
    p.add_argument("--language")
    p.add_argument("--patch", help="space-separated output tokens; default the top beam result")
    p.add_argument("--beam-width", type=int, default=1)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("selftest", help="gradient checks and tokenizer round-trip")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return parser


def _subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def _apply_config(parser, path: str, command: str) -> None:
    """Use ``[command]`` keys of an INI file as defaults; unknown keys are rejected."""
    cfg = configparser.ConfigParser(interpolation=None)
    if not cfg.read(path, encoding="utf-8"):
        parser.error(f"cannot read config file {path}")
    sub = _subparsers(parser)[command]
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "func")}
    for section in cfg.sections():
        if section not in _subparsers(parser):
            parser.error(f"config: unknown section [{section}]")
    if not cfg.has_section(command):
        return
    defaults = {}
    for key, raw in cfg.items(command):
        dest = key.replace("-", "_")
        action = actions.get(dest)
        if action is None:
            parser.error(f"config: unknown key {key!r} in [{command}]")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = cfg.getboolean(command, key)
        elif action.type is not None:
            try:
                defaults[dest] = action.type(raw)
            except ValueError:
                parser.error(f"config: bad value for {key}: {raw!r}")
        else:
            defaults[dest] = raw
    sub.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        pre, _ = parser.parse_known_args(argv)
        if pre.config and pre.command:
            _apply_config(parser, pre.config, pre.command)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    missing = [d for d in REQUIRED.get(args.command, ()) if getattr(args, d) is None]
    if missing:
        sub = _subparsers(parser)[args.command]
        print(sub.format_usage().rstrip(), file=sys.stderr)
        print(f"convfix {args.command}: error: the following arguments are required: "
              + ", ".join("--" + d.replace("_", "-") for d in missing), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DomainError, ValueError, RuntimeError, OSError) as exc:
        print(f"convfix {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

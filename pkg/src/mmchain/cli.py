"""``mmchain`` command line: generate-data, train, evaluate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .chain import Chain
from .checkpoint import CheckpointError, read_checkpoint
from .config import VOCAB, ChainConfig
from .experiment import SpecError, load_spec, parse_spec
from .microworld import (CorpusFormatError, WorldConfig, corpus_digest, distinct_captions,
                         generate_corpus, load_corpus, save_corpus)
from .report import format_table, write_report
from .schedule import ScheduleError, evaluate, load_chain, run_schedule, validate_schedule

log = logging.getLogger("mmchain")


class CliError(Exception):
    pass


def _fail(msg: str) -> int:
    print(f"mmchain: error: {msg}", file=sys.stderr)
    return 2


def cmd_generate_data(args) -> int:
    if args.n < 1:
        raise CliError(f"--n must be >= 1, got {args.n}")
    world = load_spec(args.spec).world() if args.spec else WorldConfig()
    out = Path(args.out)
    if not out.parent.exists():
        raise CliError(f"cannot write {out}: directory {out.parent} does not exist")
    corpus = generate_corpus(args.n, world, args.seed)
    try:
        save_corpus(corpus, out)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc.strerror}") from None
    lengths = [len(e.caption) for e in corpus.examples]
    print(f"examples\t{len(corpus)}")
    print(f"vocab_size\t{len(VOCAB)}")
    print(f"distinct_captions\t{distinct_captions(corpus)}")
    print(f"caption_tokens\t{min(lengths)}-{max(lengths)}")
    print(f"seed\t{args.seed}")
    print(f"digest\t{corpus_digest(corpus)}")
    return 0


def _spec_for_train(args):
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    return spec


def cmd_train(args) -> int:
    spec = _spec_for_train(args)
    out = Path(args.out or spec.output or "run")
    corpus = spec.build_corpus()
    partition = spec.build_partition(corpus)
    validate_schedule(partition, spec.schedule)
    chain = Chain(spec.config)
    if args.resume:
        # check compatibility before touching the output directory
        read_checkpoint(args.resume, expect_hash=spec.config.digest())
    out.mkdir(parents=True, exist_ok=True)
    spec.dump(out / "spec.yaml")
    history = run_schedule(chain, partition, spec.schedule, out_dir=out, resume=args.resume,
                           eval_split=spec.eval_split, meta={"spec": spec.to_dict()})
    paths = write_report(history, out, title=Path(str(args.spec)).stem)
    print("--- report ---")
    print(format_table(history))
    print("--- end report ---")
    for kind, p in paths.items():
        print(f"{kind}\t{p}")
    print(f"metrics\t{out / 'metrics.jsonl'}")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise CliError(f"checkpoint {ckpt} does not exist")
    _, stored_hash, meta = read_checkpoint(ckpt)
    if "spec" not in meta:
        raise CliError(f"{ckpt} does not record the experiment spec it belongs to")
    if args.spec:
        expected = load_spec(args.spec).config.digest()
        if expected != stored_hash:
            raise CheckpointError(f"config-hash mismatch: checkpoint has {stored_hash[:12]}..., "
                                  f"spec {args.spec} gives {expected[:12]}...")
    spec = parse_spec(meta["spec"])
    config = ChainConfig.from_dict(meta["config"])
    if config.digest() != stored_hash:
        raise CheckpointError("config-hash mismatch between checkpoint header and its stored config")
    corpus = load_corpus(args.corpus) if args.corpus else spec.build_corpus()
    if corpus.config.feature_dim != config.feature_dim or corpus.config.region_dim != config.region_dim:
        raise CliError("corpus feature sizes do not match the checkpoint's models")
    partition = spec.build_partition(corpus)
    if args.split not in ("dev", "test", "paired"):
        raise CliError(f"--split must be dev, test or paired, got {args.split!r}")
    data = partition.paired(args.split)
    if not data:
        raise CliError(f"split {args.split!r} is empty")
    chain = Chain(config)
    load_chain(chain, ckpt)
    scores = evaluate(chain, data)
    record = {"checkpoint": str(ckpt), "block": meta.get("block"), "split": args.split, **scores}
    print(format_table([{"name": f"block {meta.get('block')}", **scores}]))
    print(json.dumps(record, sort_keys=True))
    if args.out:
        Path(args.out).write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmchain", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="generate a micro-world corpus file")
    g.add_argument("--n", type=int, required=True, help="number of examples")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="corpus file to write")
    g.add_argument("--spec", help="take the world settings from this spec")
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="run an experiment spec")
    t.add_argument("--spec", required=True, help="spec file or bundled scenario (table3, table4, topline)")
    t.add_argument("--out", help="run directory (default: the spec's output, else ./run)")
    t.add_argument("--seed", type=int, help="override the spec seed")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on a held-out split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", help="corpus file (default: regenerate from the run's spec)")
    e.add_argument("--spec", help="spec the checkpoint must be compatible with")
    e.add_argument("--split", default="dev")
    e.add_argument("--out", help="write the metric record as JSON here")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (SpecError, ScheduleError) as exc:
        return _fail(str(exc))
    except (CheckpointError, CorpusFormatError, CliError) as exc:
        return _fail(str(exc))
    except (FileNotFoundError, PermissionError) as exc:
        return _fail(f"{exc.filename}: {exc.strerror}")
    except ValueError as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())

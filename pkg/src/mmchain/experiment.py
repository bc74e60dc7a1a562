"""Experiment specs: YAML files naming a corpus, a partition, chain
hyperparameters, a block schedule and a seed.

Example (the bundled scenarios live in ``mmchain/scenarios``)::

    seed: 0
    corpus:
      generate: {n: 3900, world: {sigma_spk: 1.0}}   # or  file: path/to/corpus.bin
    partition: [200, 700, 1000, 1000, 500, 500]      # paired, unpaired, speech, image, dev, test
    config: {hidden: 64}                              # ChainConfig overrides
    schedule:
      - name: Type1
        steps:
          - {regime: Type1, dataset: paired, batch_size: 16, steps: 800}

The top-level seed drives corpus generation, partitioning, model
initialisation and every sampling decision.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .config import ChainConfig
from .microworld import Corpus, WorldConfig, generate_corpus, load_corpus, partition_corpus
from .schedule import DATASETS, Block, RegimeStep, schedule_problems, sizes_of
from .chain import REGIMES

SCENARIOS = ("table3", "table4", "topline")
_TOP_KEYS = {"seed", "corpus", "partition", "config", "schedule", "output", "eval_split"}


class SpecError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid experiment spec:\n  " + "\n  ".join(self.problems))


@dataclass
class ExperimentSpec:
    config: ChainConfig
    corpus: dict
    partition: list[int]
    schedule: list[Block]
    seed: int = 0
    output: str | None = None
    eval_split: str = "dev"
    raw: dict = field(default_factory=dict, repr=False)

    def world(self) -> WorldConfig:
        return WorldConfig.from_dict(self.corpus.get("generate", {}).get("world", {}))

    def build_corpus(self) -> Corpus:
        if "file" in self.corpus:
            return load_corpus(self.corpus["file"])
        return generate_corpus(int(self.corpus["generate"]["n"]), self.world(), self.seed)

    def build_partition(self, corpus: Corpus | None = None):
        return partition_corpus(corpus or self.build_corpus(), self.partition, self.seed)

    def to_dict(self) -> dict:
        d = copy.deepcopy(self.raw)
        d["seed"] = self.seed
        if self.output is not None:
            d["output"] = self.output
        return d

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    def with_seed(self, seed: int) -> "ExperimentSpec":
        raw = copy.deepcopy(self.raw)
        raw["seed"] = seed
        return parse_spec(raw)


def _check_world(world, problems: list[str]) -> None:
    if not isinstance(world, dict):
        problems.append("corpus.generate.world must be a mapping")
        return
    known = {f.name for f in dataclasses.fields(WorldConfig)}
    for k in sorted(set(world) - known):
        problems.append(f"corpus.generate.world: unknown key {k!r}")
    try:
        WorldConfig.from_dict({k: v for k, v in world.items() if k in known})
    except (ValueError, TypeError) as exc:
        problems.append(f"corpus.generate.world: {exc}")


def _check_corpus(corpus, problems: list[str]) -> None:
    if not isinstance(corpus, dict) or len(set(corpus) & {"generate", "file"}) != 1:
        problems.append("corpus must have exactly one of 'generate' or 'file'")
        return
    for k in sorted(set(corpus) - {"generate", "file"}):
        problems.append(f"corpus: unknown key {k!r}")
    if "file" in corpus:
        if not Path(str(corpus["file"])).is_file():
            problems.append(f"corpus.file {corpus['file']!r} does not exist")
        return
    gen = corpus["generate"]
    if not isinstance(gen, dict):
        problems.append("corpus.generate must be a mapping")
        return
    for k in sorted(set(gen) - {"n", "world"}):
        problems.append(f"corpus.generate: unknown key {k!r}")
    n = gen.get("n")
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        problems.append(f"corpus.generate.n must be a positive integer, got {n!r}")
    _check_world(gen.get("world", {}), problems)


def _check_config(cfg, problems: list[str]) -> ChainConfig | None:
    if not isinstance(cfg, dict):
        problems.append("config must be a mapping")
        return None
    base = ChainConfig()
    known = {f.name for f in dataclasses.fields(ChainConfig)}
    ok = True
    kwargs = {}
    for k, v in cfg.items():
        if k == "seed":
            problems.append("config: set the seed at the top level, not inside config")
            ok = False
            continue
        if k not in known:
            problems.append(f"config: unknown key {k!r}")
            ok = False
            continue
        want = type(getattr(base, k))
        if want is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if not isinstance(v, want) or (isinstance(v, bool) and want is not bool):
            problems.append(f"config.{k} must be {want.__name__}, got {v!r}")
            ok = False
            continue
        kwargs[k] = v
    candidate = {**dataclasses.asdict(base), **kwargs}
    errs = ChainConfig.problems(_Unchecked(candidate))
    problems.extend(f"config: {e}" for e in errs)
    if not ok or errs:
        return None
    return ChainConfig(**candidate)


class _Unchecked:
    """Attribute bag so ChainConfig.problems can run without raising."""

    def __init__(self, d: dict):
        self.__dict__.update(d)


def _check_schedule(schedule, problems: list[str]) -> list[Block]:
    if not isinstance(schedule, list):
        problems.append("schedule must be a list of blocks")
        return []
    blocks = []
    fields_ = {f.name for f in dataclasses.fields(RegimeStep)}
    for b, block in enumerate(schedule):
        where = f"schedule[{b}]"
        if not isinstance(block, dict) or "name" not in block:
            problems.append(f"{where}: a block needs a name and a list of steps")
            continue
        steps = []
        for s, step in enumerate(block.get("steps") or []):
            w = f"{where}.steps[{s}]"
            if not isinstance(step, dict):
                problems.append(f"{w}: must be a mapping")
                continue
            for k in sorted(set(step) - fields_):
                problems.append(f"{w}: unknown key {k!r}")
            for k in ("regime", "dataset"):
                if k not in step:
                    problems.append(f"{w}: missing {k!r}")
            if step.get("regime") is not None and step.get("regime") not in REGIMES:
                problems.append(f"{w}: unknown regime {step.get('regime')!r}")
            if step.get("dataset") is not None and step.get("dataset") not in DATASETS:
                problems.append(f"{w}: unknown dataset {step.get('dataset')!r}")
            for k in ("batch_size", "steps"):
                v = step.get(k, 1)
                if not isinstance(v, int) or isinstance(v, bool) or v < (1 if k == "batch_size" else 0):
                    problems.append(f"{w}: {k} must be a {'positive' if k == 'batch_size' else 'non-negative'}"
                                    f" integer, got {v!r}")
            try:
                steps.append(RegimeStep(**{k: v for k, v in step.items() if k in fields_}))
            except TypeError:
                pass
        blocks.append(Block(str(block["name"]), steps))
    return blocks


def parse_spec(raw: dict) -> ExperimentSpec:
    """Validate ``raw`` completely; raise one SpecError listing every problem."""
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise SpecError(["spec must be a mapping"])
    for k in sorted(set(raw) - _TOP_KEYS):
        problems.append(f"unknown top-level key {k!r}")
    for k in ("corpus", "partition", "schedule"):
        if k not in raw:
            problems.append(f"missing top-level key {k!r}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        problems.append(f"seed must be a non-negative integer, got {seed!r}")
        seed = 0
    if "corpus" in raw:
        _check_corpus(raw["corpus"], problems)
    part = raw.get("partition", [])
    if not isinstance(part, list) or not 4 <= len(part) <= 6 or \
            any(not isinstance(v, int) or isinstance(v, bool) or v < 0 for v in part):
        problems.append("partition must list 4 to 6 non-negative integers "
                        "(paired, unpaired, speech_only, image_only, dev, test)")
        part = []
    else:
        gen = raw.get("corpus", {}).get("generate") if isinstance(raw.get("corpus"), dict) else None
        n = gen.get("n") if isinstance(gen, dict) else None
        if isinstance(n, int) and sum(part) > n:
            problems.append(f"partition sizes sum to {sum(part)}, more than the corpus size {n}")
    eval_split = raw.get("eval_split", "dev")
    if eval_split not in ("dev", "test"):
        problems.append(f"eval_split must be 'dev' or 'test', got {eval_split!r}")
    elif part:
        idx = 4 if eval_split == "dev" else 5
        if len(part) <= idx or part[idx] == 0:
            problems.append(f"partition has no non-empty {eval_split!r} split to evaluate on")
    config = _check_config(raw.get("config", {}) or {}, problems)
    blocks = _check_schedule(raw.get("schedule", []), problems)
    if part and not any("schedule[" in p for p in problems):
        problems.extend(schedule_problems(sizes_of(part), blocks))
    if problems:
        raise SpecError(problems)
    config = dataclasses.replace(config, seed=seed)
    return ExperimentSpec(config, raw["corpus"], list(part), blocks, seed,
                          raw.get("output"), eval_split, copy.deepcopy(raw))


def load_spec(path) -> ExperimentSpec:
    """Load a spec file, or a bundled scenario by name (``table3`` etc.)."""
    if str(path) in SCENARIOS:
        text = resources.files("mmchain.scenarios").joinpath(f"{path}.yaml").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise SpecError([f"cannot read spec {path}: {exc.strerror}"]) from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SpecError([f"spec is not valid YAML: {exc}"]) from None
    return parse_spec(raw)

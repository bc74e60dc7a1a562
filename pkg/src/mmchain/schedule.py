"""Block schedules over a corpus partition: validation, training, evaluation,
metrics history and per-block checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import metrics
from .chain import REGIMES, Chain
from .checkpoint import read_checkpoint, write_checkpoint
from .microworld import CorpusPartition

log = logging.getLogger(__name__)

HISTORY_SCHEMA = 1
DATASETS = ("paired", "unpaired", "speech_only", "image_only", "all")

# modality each regime consumes from its dataset
_NEEDS = {
    "Type1": "xyz", "Type2a": "x", "Type2b": "z", "Type2c_speech": "y",
    "Type2c_visual": "y", "Type3a": "y", "Type3b": "x", "Type3c": "z",
}
_HAS = {"paired": "xyz", "all": "xyz", "unpaired": "x y z", "speech_only": "x", "image_only": "z"}
_NEEDS_GALLERY = ("Type2c_visual", "Type3a", "Type3b")
# regimes whose in-batch negatives need at least two items
_MIN_BATCH = {"Type1": 2, "Type2b": 2, "Type3c": 2}


class ScheduleError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid schedule:\n  " + "\n  ".join(self.problems))


@dataclass
class RegimeStep:
    regime: str
    dataset: str
    batch_size: int = 16
    steps: int = 100
    gallery: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RegimeStep":
        return cls(**d)


@dataclass
class Block:
    name: str
    steps: list[RegimeStep] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "steps": [asdict(s) for s in self.steps]}

    @classmethod
    def from_dict(cls, d: dict) -> "Block":
        return cls(d["name"], [RegimeStep.from_dict(s) for s in d.get("steps", [])])


# -- data access -----------------------------------------------------------------

def dataset_items(partition: CorpusPartition, dataset: str, regime: str) -> list:
    """The items a regime consumes from ``dataset``: triples for Type1,
    otherwise the single modality it needs."""
    need = _NEEDS[regime]
    if need == "xyz":
        return partition.paired(dataset)
    if dataset in ("paired", "all"):
        k = "xyz".index(need)
        return [t[k] for t in partition.paired(dataset)]
    if dataset == "unpaired":
        return {"x": partition.unpaired_speech, "y": partition.unpaired_text,
                "z": partition.unpaired_images}[need]()
    if dataset == "speech_only" and need == "x":
        return partition.speech_only()
    if dataset == "image_only" and need == "z":
        return partition.image_only()
    raise ScheduleError([f"{regime} needs modality {need!r}, which {dataset!r} does not expose"])


def _images_of(partition: CorpusPartition, dataset: str) -> list:
    if dataset in ("paired", "all"):
        return [t[2] for t in partition.paired(dataset)]
    if dataset == "unpaired":
        return partition.unpaired_images()
    if dataset == "image_only":
        return partition.image_only()
    return []


def sizes_of(partition_sizes) -> dict[str, int]:
    names = ("paired", "unpaired", "speech_only", "image_only", "dev", "test")
    sizes = dict(zip(names, list(partition_sizes) + [0] * 6))
    sizes["all"] = sum(sizes[k] for k in names[:4])
    return sizes


_IMAGE_SPLITS = ("paired", "all", "unpaired", "image_only")


def gallery_source(sizes: dict[str, int], step: RegimeStep) -> str | None:
    """Where the retrieval gallery comes from: an explicit choice, else the
    active dataset if it has images, else the first non-empty image split."""
    if step.gallery is not None:
        return step.gallery
    for name in (step.dataset, "unpaired", "image_only", "paired"):
        if name in _IMAGE_SPLITS and sizes.get(name, 0) > 0:
            return name
    return None


def schedule_problems(sizes: dict[str, int], blocks: list[Block]) -> list[str]:
    """Every incompatibility between ``blocks`` and a partition of ``sizes``."""
    problems = []
    for b, block in enumerate(blocks):
        for s, step in enumerate(block.steps):
            where = f"block {b + 1} ({block.name}) step {s}"
            if step.regime not in REGIMES:
                problems.append(f"{where}: unknown regime {step.regime!r}")
                continue
            if step.dataset not in DATASETS:
                problems.append(f"{where}: unknown dataset {step.dataset!r}")
                continue
            need = _NEEDS[step.regime]
            if need not in _HAS[step.dataset]:
                problems.append(f"{where}: {step.regime} needs modality {need!r}, "
                                f"which {step.dataset!r} does not expose")
            if step.steps > 0 and sizes.get(step.dataset, 0) == 0:
                problems.append(f"{where}: dataset {step.dataset!r} is empty")
            lo = _MIN_BATCH.get(step.regime, 1)
            if step.batch_size < lo:
                problems.append(f"{where}: {step.regime} needs batch_size >= {lo}, got {step.batch_size}")
            if step.steps < 0:
                problems.append(f"{where}: steps must be >= 0, got {step.steps}")
            if step.regime in _NEEDS_GALLERY:
                src = gallery_source(sizes, step)
                if src is None or src not in _IMAGE_SPLITS or sizes.get(src, 0) == 0:
                    problems.append(f"{where}: {step.regime} needs a non-empty retrieval gallery")
    return problems


def partition_sizes(partition: CorpusPartition) -> dict[str, int]:
    return sizes_of([partition.sizes.get(k, 0) for k in
                     ("paired", "unpaired", "speech_only", "image_only", "dev", "test")])


def validate_schedule(partition: CorpusPartition, blocks: list[Block]) -> None:
    problems = schedule_problems(partition_sizes(partition), blocks)
    if problems:
        raise ScheduleError(problems)


class _Stream:
    """Endless shuffled mini-batches; reshuffles every epoch."""

    def __init__(self, items: list, batch_size: int, rng: np.random.Generator):
        self.items, self.batch_size, self.rng = items, batch_size, rng
        self.order: list[int] = []

    def next(self) -> list:
        out = []
        while len(out) < min(self.batch_size, len(self.items)):
            if not self.order:
                self.order = [int(i) for i in self.rng.permutation(len(self.items))]
            out.append(self.items[self.order.pop()])
        return out


def interleave(counts: list[int]) -> list[int]:
    """Spread ``counts[i]`` updates of each step evenly; ties go to the lower index."""
    events = [((k + 0.5) / n, i) for i, n in enumerate(counts) for k in range(n)]
    return [i for _, i in sorted(events)]


# -- evaluation --------------------------------------------------------------------

def evaluate(chain: Chain, data: list[tuple], batch_size: int = 64) -> dict:
    """Held-out metrics on paired ``(speech, caption, regions)`` triples."""
    if not data:
        raise ValueError("evaluation split is empty")
    xs, ys, zs = ([d[k] for d in data] for k in range(3))
    hyp_text, hyp_cap, l2 = [], [], []
    for i in range(0, len(data), batch_size):
        sl = slice(i, i + batch_size)
        hyp_text += chain.transcribe(xs[sl])
        hyp_cap += chain.caption(zs[sl])
        frames, _ = chain.synthesize(ys[sl])
        l2 += [metrics.tts_l2(p, r) for p, r in zip(frames, xs[sl])]
    with ag.no_grad():
        ret = metrics.retrieval_metrics(chain.models.ir, ys, zs)
    return {
        "wer": metrics.corpus_error_rate(hyp_text, ys, "word"),
        "cer": metrics.corpus_error_rate(hyp_text, ys, "char"),
        "tts_l2": float(np.mean(l2)),
        "bleu1": metrics.corpus_bleu1(hyp_cap, ys),
        "recall_at": {str(k): v for k, v in ret["recall"].items()},
        "median_rank": ret["median_rank"],
    }


def report_of(record: dict) -> metrics.MetricReport:
    return metrics.MetricReport.from_dict({k: record[k] for k in
                                           ("wer", "cer", "tts_l2", "bleu1", "recall_at", "median_rank")})


# -- running -------------------------------------------------------------------------

def train_block(chain: Chain, partition: CorpusPartition, block: Block, index: int) -> dict:
    """Run one block's regime steps interleaved; returns summed step counters."""
    seed = chain.config.seed
    streams, galleries, rngs = [], [], []
    for s, step in enumerate(block.steps):
        items = dataset_items(partition, step.dataset, step.regime)
        streams.append(_Stream(items, step.batch_size, np.random.default_rng([seed, 77, index, s])))
        rngs.append(np.random.default_rng([seed, 78, index, s]))
        galleries.append(_images_of(partition, gallery_source(partition_sizes(partition), step))
                         if step.regime in _NEEDS_GALLERY else None)
    counters = {"updates": 0, "skipped_empty": 0, "truncated": 0}
    for s in interleave([st.steps for st in block.steps]):
        step = block.steps[s]
        terms = chain.terms_for(step.regime, streams[s].next(), galleries[s], rngs[s])
        chain.apply(terms)
        counters["updates"] += 1
        for k in ("skipped_empty", "truncated"):
            counters[k] += terms.info.get(k, 0)
    return counters


def _record(block: int, name: str, step: int, counters: dict, scores: dict) -> dict:
    return {"schema": HISTORY_SCHEMA, "block": block, "name": name, "step": step,
            **scores, "skipped_empty": counters.get("skipped_empty", 0),
            "truncated": counters.get("truncated", 0)}


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True)


def checkpoint_path(out_dir, block: int) -> Path:
    return Path(out_dir) / "checkpoints" / f"block-{block:03d}.ckpt"


def save_chain(chain: Chain, path, meta: dict) -> None:
    meta = {**meta, "config": chain.config.to_dict()}
    write_checkpoint(path, chain.state_arrays(), chain.config.digest(), meta)


def load_chain(chain: Chain, path) -> dict:
    arrays, _, meta = read_checkpoint(path, expect_hash=chain.config.digest())
    chain.load_state_arrays(arrays)
    return meta


def run_schedule(chain: Chain, partition: CorpusPartition, blocks: list[Block],
                 out_dir=None, resume=None, eval_split: str = "dev", meta: dict | None = None) -> list[dict]:
    """Train ``blocks`` in order, evaluating on ``eval_split`` at block 0
    (initial models) and after every block.

    With ``out_dir`` the history is written as JSON lines to
    ``metrics.jsonl`` and a checkpoint after each evaluation point.
    ``resume`` is a checkpoint path; training restarts after its block.
    """
    validate_schedule(partition, blocks)
    data = partition.paired(eval_split)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)

    history: list[dict] = []
    start, total = 0, 0
    if resume is not None:
        saved = load_chain(chain, resume)
        history = saved["history"]
        start, total = saved["block"] + 1, saved["step"]
    if out is not None:
        with open(out / "metrics.jsonl", "w") as fh:
            fh.writelines(_dumps(r) + "\n" for r in history)

    for b in range(start, len(blocks) + 1):
        if b == 0:
            name, counters = "init", {}
        else:
            block = blocks[b - 1]
            name = block.name
            counters = train_block(chain, partition, block, b)
            total += counters["updates"]
        rec = _record(b, name, total, counters, evaluate(chain, data))
        history.append(rec)
        log.info("block %d %s: WER %.2f BLEU1 %.2f med r %.1f", b, name,
                 rec["wer"], rec["bleu1"], rec["median_rank"])
        if out is not None:
            save_chain(chain, checkpoint_path(out, b),
                       {**(meta or {}), "block": b, "step": total, "history": history})
            with open(out / "metrics.jsonl", "a") as fh:
                fh.write(_dumps(rec) + "\n")
    return history


def read_history(path) -> list[dict]:
    with open(path) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    for r in records:
        if r.get("schema") != HISTORY_SCHEMA:
            raise ValueError(f"{path}: metrics schema {r.get('schema')}, expected {HISTORY_SCHEMA}")
    return records

"""Deterministic synthetic tri-modal corpus: scenes, captions, speech, images.

Scenes hold one to three coloured shapes laid out on a grid. A caption
reads the scene as a chain ``a <color> <shape> (<relation> a <color> <shape>)*``
where ``above`` places the next object one row down and ``left-of`` one
column right, starting from the top-left cell. The layout is a function of
the caption, so captions and noise-free scenes determine each other.

Speech renders each word as a fixed 3-frame template, blends the first
frame of each word with the last frame of the previous one (coarticulation)
and adds Gaussian noise. Image regions one-hot encode the (shape, color)
pair of the object in each cell, plus Gaussian noise.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import COLORS, EOS, RELATIONS, SHAPES, VOCAB

MAGIC = b"MMWC"
FORMAT_VERSION = 1


class CorpusFormatError(ValueError):
    pass


class CorpusVersionError(CorpusFormatError):
    pass


class CorpusTruncatedError(CorpusFormatError):
    pass


class CorpusChecksumError(CorpusFormatError):
    pass


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class WorldConfig:
    grid_size: int = 4
    region_dim: int = 12
    feature_dim: int = 8
    frames_per_token: int = 3
    sigma_spk: float = 0.05
    sigma_img: float = 0.05
    coarticulation: float = 0.3
    template_scale: float = 0.5
    template_seed: int = 20190
    object_weights: tuple = (1.0, 1.0, 1.0)
    dedup: bool = True

    def __post_init__(self):
        if self.grid_size < 3:
            raise ValueError("grid_size must be >= 3 to fit three-object layouts")
        if self.region_dim < len(SHAPES) * len(COLORS):
            raise ValueError(f"region_dim must be >= {len(SHAPES) * len(COLORS)}")
        if len(self.object_weights) != 3:
            raise ValueError("object_weights needs one weight per object count 1..3")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["object_weights"] = list(self.object_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        d = dict(d)
        if "object_weights" in d:
            d["object_weights"] = tuple(d["object_weights"])
        return cls(**d)

    def digest(self) -> bytes:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).digest()


@dataclass(frozen=True)
class Scene:
    objects: tuple          # ((shape, color, (row, col)), ...)
    relations: tuple        # relation between consecutive objects
    grid_size: int = 4

    def __post_init__(self):
        if not 1 <= len(self.objects) <= 3:
            raise ValueError("a scene holds 1 to 3 objects")
        cells = [o[2] for o in self.objects]
        if len(set(cells)) != len(cells):
            raise ValueError("two objects share a cell")

    @classmethod
    def from_description(cls, items, relations, grid_size: int = 4) -> "Scene":
        """Lay out ``[(shape, color), ...]`` joined by ``relations`` from cell (0, 0)."""
        if len(relations) != len(items) - 1:
            raise ValueError("need one relation between each consecutive pair")
        r = c = 0
        objs = [(items[0][0], items[0][1], (0, 0))]
        for (shape, color), rel in zip(items[1:], relations):
            if rel == "above":
                r += 1
            elif rel == "left-of":
                c += 1
            else:
                raise ValueError(f"unknown relation {rel!r}")
            objs.append((shape, color, (r, c)))
        return cls(tuple(objs), tuple(relations), grid_size)

    def words(self) -> list[str]:
        out = ["a", self.objects[0][1], self.objects[0][0]]
        for (shape, color, _), rel in zip(self.objects[1:], self.relations):
            out += [rel, "a", color, shape]
        return out

    def caption(self) -> np.ndarray:
        return np.array(VOCAB.encode(self.words()), dtype=np.int64)


@dataclass
class CorpusExample:
    id: int
    scene: Scene
    caption: np.ndarray
    speech: np.ndarray
    regions: np.ndarray
    pairing: str | None = None


@dataclass
class Corpus:
    config: WorldConfig
    seed: int
    examples: list[CorpusExample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.examples)

    def __getitem__(self, i: int) -> CorpusExample:
        return self.examples[i]


# -- rendering ------------------------------------------------------------------

def _templates(cfg: WorldConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.template_seed)
    return cfg.template_scale * rng.standard_normal((len(VOCAB), cfg.frames_per_token, cfg.feature_dim))


def render_speech(caption: np.ndarray, cfg: WorldConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Frames for every word of ``caption`` (EOS is silent)."""
    tmpl = _templates(cfg)
    words = [int(t) for t in caption if t != EOS]
    segs = []
    for i, w in enumerate(words):
        seg = tmpl[w].copy()
        if i > 0:
            c = cfg.coarticulation
            seg[0] = (1.0 - c) * seg[0] + c * tmpl[words[i - 1]][-1]
        segs.append(seg)
    frames = np.concatenate(segs, axis=0)
    if rng is not None and cfg.sigma_spk > 0:
        frames = frames + cfg.sigma_spk * rng.standard_normal(frames.shape)
    return frames


def render_regions(scene: Scene, cfg: WorldConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    g = cfg.grid_size
    regions = np.zeros((g * g, cfg.region_dim))
    for shape, color, (r, c) in scene.objects:
        regions[r * g + c, SHAPES.index(shape) * len(COLORS) + COLORS.index(color)] = 1.0
    if rng is not None and cfg.sigma_img > 0:
        regions = regions + cfg.sigma_img * rng.standard_normal(regions.shape)
    return regions


def _speech_rng(seed: int, idx: int) -> np.random.Generator:
    return np.random.default_rng([seed, idx, 1])


def _image_rng(seed: int, idx: int) -> np.random.Generator:
    return np.random.default_rng([seed, idx, 2])


def make_example(idx: int, scene: Scene, cfg: WorldConfig, seed: int) -> CorpusExample:
    cap = scene.caption()
    return CorpusExample(idx, scene, cap,
                         render_speech(cap, cfg, _speech_rng(seed, idx)),
                         render_regions(scene, cfg, _image_rng(seed, idx)))


# -- generation -----------------------------------------------------------------

def _objects():
    return [(s, c) for s in SHAPES for c in COLORS]


def scene_space_size(n_objects: int) -> int:
    return len(_objects()) ** n_objects * len(RELATIONS) ** (n_objects - 1)


def _scene_from_index(n_objects: int, index: int, grid_size: int) -> Scene:
    objs = _objects()
    items, rels = [], []
    for k in range(n_objects):
        index, o = divmod(index, len(objs))
        items.append(objs[o])
        if k < n_objects - 1:
            index, r = divmod(index, len(RELATIONS))
            rels.append(RELATIONS[r])
    return Scene.from_description(items, rels, grid_size)


def generate_corpus(n: int, config: WorldConfig | None = None, seed: int = 0) -> Corpus:
    """Sample ``n`` scenes and render all three modalities.

    With ``config.dedup`` every scene (equivalently caption) is distinct;
    object counts are drawn by ``object_weights`` among the counts that
    still have unused scenes.
    """
    cfg = config or WorldConfig()
    if n < 1:
        raise ValueError("corpus size n must be >= 1")
    capacity = sum(scene_space_size(k) for k in (1, 2, 3))
    if cfg.dedup and n > capacity:
        raise CapacityError(f"n={n} exceeds the {capacity} distinct scenes; "
                            "generate with dedup disabled to allow repeats")
    rng = np.random.default_rng([seed, 0])
    weights = np.asarray(cfg.object_weights, dtype=float)
    pools = {k: rng.permutation(scene_space_size(k)) for k in (1, 2, 3)}
    used = {k: 0 for k in (1, 2, 3)}
    examples = []
    for idx in range(n):
        if cfg.dedup:
            avail = np.array([used[k] < len(pools[k]) for k in (1, 2, 3)])
            w = weights * avail
            k = int(rng.choice(3, p=w / w.sum())) + 1
            scene_index = int(pools[k][used[k]])
            used[k] += 1
        else:
            k = int(rng.choice(3, p=weights / weights.sum())) + 1
            scene_index = int(rng.integers(scene_space_size(k)))
        examples.append(make_example(idx, _scene_from_index(k, scene_index, cfg.grid_size), cfg, seed))
    return Corpus(cfg, seed, examples)


# -- partitioning ---------------------------------------------------------------

PARTITION_NAMES = ("paired", "unpaired", "speech_only", "image_only")


class CorpusPartition:
    """Disjoint training splits plus held-out dev/test.

    Modality access is enforced by the accessors: the unpaired split hands
    out speech, text and images in three independent orders; the single-
    modality splits never expose anything but their own modality.
    """

    def __init__(self, corpus: Corpus, ids: dict[str, list[int]], seed: int):
        self.corpus = corpus
        self.ids = {k: list(v) for k, v in ids.items()}
        self.seed = seed
        u = self.ids["unpaired"]
        # rotations make the three orders mutually misaligned
        self._u_speech = u
        self._u_text = u[1:] + u[:1]
        self._u_image = u[2:] + u[:2]
        self._pairing = {}
        for name in PARTITION_NAMES:
            for i in self.ids[name]:
                self._pairing[i] = name

    @property
    def sizes(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.ids.items()}

    def pairing_of(self, example_id: int) -> str | None:
        return self._pairing.get(example_id)

    def _ex(self, i):
        return self.corpus.examples[i]

    def paired(self, name: str = "paired") -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """(speech, caption, regions) triples for a paired or held-out split."""
        if name not in ("paired", "dev", "test", "all"):
            raise KeyError(f"split {name!r} is not paired")
        ids = self.all_training_ids() if name == "all" else self.ids[name]
        return [(self._ex(i).speech, self._ex(i).caption, self._ex(i).regions) for i in ids]

    def unpaired_speech(self) -> list[np.ndarray]:
        return [self._ex(i).speech for i in self._u_speech]

    def unpaired_text(self) -> list[np.ndarray]:
        return [self._ex(i).caption for i in self._u_text]

    def unpaired_images(self) -> list[np.ndarray]:
        return [self._ex(i).regions for i in self._u_image]

    def speech_only(self) -> list[np.ndarray]:
        return [self._ex(i).speech for i in self.ids["speech_only"]]

    def image_only(self) -> list[np.ndarray]:
        return [self._ex(i).regions for i in self.ids["image_only"]]

    def all_training_ids(self) -> list[int]:
        return [i for name in PARTITION_NAMES for i in self.ids[name]]


def partition_corpus(corpus: Corpus, sizes, seed: int = 0) -> CorpusPartition:
    """Shuffle with ``seed`` and split into (paired, unpaired, speech-only,
    image-only[, dev[, test]]) of the given sizes."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) not in (4, 5, 6) or min(sizes) < 0:
        raise ValueError("sizes must be 4 to 6 non-negative counts")
    sizes = sizes + (0,) * (6 - len(sizes))
    if sum(sizes) > len(corpus):
        raise ValueError(f"partition sizes {sizes} oversubscribe a corpus of {len(corpus)}")
    order = [int(i) for i in np.random.default_rng([seed, 7]).permutation(len(corpus))]
    names = PARTITION_NAMES + ("dev", "test")
    ids, start = {}, 0
    for name, size in zip(names, sizes):
        ids[name] = order[start:start + size]
        start += size
    part = CorpusPartition(corpus, ids, seed)
    for ex in corpus.examples:
        ex.pairing = part.pairing_of(ex.id)
    return part


# -- persistence ----------------------------------------------------------------
# Layout (little-endian):
#   magic "MMWC" | u16 version | u64 payload length | payload | sha256(magic..payload)
# payload:
#   u64 seed | u32 config-json length | config json | 32-byte config digest | u32 n
#   n records: u32 id | u8 n_objects | n_objects * (u8 shape, u8 color, u8 row, u8 col)
#              | u8 n_relations | relations as u8 | u16 n_tokens | u16 tokens
#              | u16 T | u16 F | T*F f64 speech | u16 R | u16 D | R*D f64 regions

def _pack_corpus(corpus: Corpus) -> bytes:
    buf = io.BytesIO()
    cfg_json = json.dumps(corpus.config.to_dict(), sort_keys=True).encode()
    buf.write(struct.pack("<QI", corpus.seed, len(cfg_json)))
    buf.write(cfg_json)
    buf.write(corpus.config.digest())
    buf.write(struct.pack("<I", len(corpus)))
    for ex in corpus.examples:
        buf.write(struct.pack("<IB", ex.id, len(ex.scene.objects)))
        for shape, color, (r, c) in ex.scene.objects:
            buf.write(struct.pack("<BBBB", SHAPES.index(shape), COLORS.index(color), r, c))
        buf.write(struct.pack("<B", len(ex.scene.relations)))
        buf.write(bytes(RELATIONS.index(rel) for rel in ex.scene.relations))
        buf.write(struct.pack("<H", len(ex.caption)))
        buf.write(ex.caption.astype("<u2").tobytes())
        for arr in (ex.speech, ex.regions):
            buf.write(struct.pack("<HH", *arr.shape))
            buf.write(arr.astype("<f8").tobytes())
    return buf.getvalue()


def corpus_bytes(corpus: Corpus) -> bytes:
    payload = _pack_corpus(corpus)
    head = MAGIC + struct.pack("<HQ", FORMAT_VERSION, len(payload))
    return head + payload + hashlib.sha256(head + payload).digest()


def save_corpus(corpus: Corpus, path) -> None:
    with open(path, "wb") as fh:
        fh.write(corpus_bytes(corpus))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorpusTruncatedError("corpus record runs past the end of the payload")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def corpus_from_bytes(data: bytes) -> Corpus:
    if len(data) < 14 or data[:4] != MAGIC:
        if len(data) < 14 and MAGIC.startswith(data[:4]):
            raise CorpusTruncatedError("file shorter than the corpus header")
        raise CorpusFormatError("not a micro-world corpus file (bad magic)")
    version, length = struct.unpack("<HQ", data[4:14])
    if version != FORMAT_VERSION:
        raise CorpusVersionError(f"corpus format version {version}, expected {FORMAT_VERSION}")
    if len(data) < 14 + length + 32:
        raise CorpusTruncatedError(f"corpus file truncated: {len(data)} bytes, expected {14 + length + 32}")
    if hashlib.sha256(data[:14 + length]).digest() != data[14 + length:14 + length + 32]:
        raise CorpusChecksumError("corpus checksum mismatch")
    rd = _Reader(data[14:14 + length])
    seed, cfg_len = rd.unpack("<QI")
    cfg_json = rd.take(cfg_len)
    cfg = WorldConfig.from_dict(json.loads(cfg_json))
    if rd.take(32) != cfg.digest():
        raise CorpusChecksumError("config digest does not match embedded config")
    (n,) = rd.unpack("<I")
    examples = []
    for _ in range(n):
        idx, n_obj = rd.unpack("<IB")
        objs = []
        for _ in range(n_obj):
            s, c, r, col = rd.unpack("<BBBB")
            objs.append((SHAPES[s], COLORS[c], (r, col)))
        (n_rel,) = rd.unpack("<B")
        rels = tuple(RELATIONS[b] for b in rd.take(n_rel))
        (n_tok,) = rd.unpack("<H")
        cap = np.frombuffer(rd.take(2 * n_tok), dtype="<u2").astype(np.int64)
        arrays = []
        for _ in range(2):
            a, b = rd.unpack("<HH")
            arrays.append(np.frombuffer(rd.take(8 * a * b), dtype="<f8").reshape(a, b).astype(np.float64))
        examples.append(CorpusExample(idx, Scene(tuple(objs), rels, cfg.grid_size), cap, *arrays))
    return Corpus(cfg, seed, examples)


def load_corpus(path) -> Corpus:
    with open(path, "rb") as fh:
        return corpus_from_bytes(fh.read())


def corpus_digest(corpus: Corpus) -> str:
    return hashlib.sha256(corpus_bytes(corpus)).hexdigest()


def distinct_captions(corpus: Corpus) -> int:
    return len({tuple(ex.caption) for ex in corpus.examples})


def all_scenes(grid_size: int = 4):
    for k in (1, 2, 3):
        for i in range(scene_space_size(k)):
            yield _scene_from_index(k, i, grid_size)


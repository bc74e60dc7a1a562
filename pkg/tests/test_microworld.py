from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmchain.config import EOS, VOCAB
from mmchain.microworld import (CapacityError, CorpusChecksumError, CorpusFormatError, CorpusTruncatedError,
                                CorpusVersionError, Scene, WorldConfig, all_scenes, corpus_bytes,
                                corpus_digest, corpus_from_bytes, distinct_captions, generate_corpus,
                                load_corpus, partition_corpus, render_regions, render_speech, save_corpus)

CLEAN = WorldConfig(sigma_spk=0.0, sigma_img=0.0)


def test_generation_is_byte_identical():
    cfg = WorldConfig()
    assert corpus_bytes(generate_corpus(50, cfg, seed=2)) == corpus_bytes(generate_corpus(50, cfg, seed=2))
    assert corpus_digest(generate_corpus(50, cfg, seed=2)) != corpus_digest(generate_corpus(50, cfg, seed=3))


def test_noise_free_identical_scenes_render_identically():
    c = generate_corpus(40, WorldConfig(sigma_spk=0.0, sigma_img=0.0, dedup=False,
                                        object_weights=(1.0, 0.0, 0.0)), seed=1)
    by_caption = {}
    repeats = 0
    for ex in c.examples:
        key = tuple(ex.caption)
        if key in by_caption:
            first = by_caption[key]
            assert np.array_equal(first.speech, ex.speech)
            assert np.array_equal(first.regions, ex.regions)
            repeats += 1
        by_caption[key] = ex
    assert repeats > 0  # only 12 one-object scenes, so 40 draws must repeat


def test_caption_lengths_and_grammar():
    c = generate_corpus(1000, WorldConfig(), seed=0)
    lengths = [len(ex.caption) for ex in c.examples]
    assert 4 <= min(lengths) and max(lengths) <= 12
    assert distinct_captions(c) == 1000
    for ex in c.examples[:200]:
        words = VOCAB.decode(ex.caption).split()
        assert ex.caption[-1] == EOS
        assert words[0] == "a" and len(words) % 4 == 3
        for k in range(3, len(words), 4):
            assert words[k] in ("above", "left-of") and words[k + 1] == "a"


def test_caption_regenerates_from_scene_and_speech_from_caption():
    c = generate_corpus(30, WorldConfig(), seed=4)
    for ex in c.examples:
        assert np.array_equal(ex.scene.caption(), ex.caption)
        rng = np.random.default_rng([c.seed, ex.id, 1])
        assert np.array_equal(render_speech(ex.caption, c.config, rng), ex.speech)
        assert ex.speech.shape == (3 * (len(ex.caption) - 1), 8)
        assert ex.regions.shape == (16, 12)


def test_grammar_injective_on_scenes_and_speech_injective_on_captions():
    scenes = list(all_scenes())
    captions = {tuple(s.caption()) for s in scenes}
    assert len(captions) == len(scenes)
    speech = {render_speech(np.array(cap), CLEAN).tobytes() for cap in captions}
    assert len(speech) == len(captions)


def test_noise_free_regions_are_one_hot_at_cells():
    scene = Scene.from_description([("circle", "red"), ("square", "blue")], ["left-of"])
    regions = render_regions(scene, CLEAN)
    assert regions.sum() == 2.0
    assert regions[0].sum() == 1.0 and regions[1].sum() == 1.0
    assert not np.array_equal(regions[0], regions[1])


def test_scene_invariants():
    with pytest.raises(ValueError):
        Scene((), ())
    with pytest.raises(ValueError, match="share a cell"):
        Scene((("circle", "red", (0, 0)), ("square", "red", (0, 0))), ("above",))


def test_generation_errors():
    with pytest.raises(ValueError):
        generate_corpus(0)
    with pytest.raises(CapacityError, match="dedup"):
        generate_corpus(10 ** 6)


# -- partitioning ---------------------------------------------------------------

def test_single_paired_example():
    c = generate_corpus(5, seed=1)
    p = partition_corpus(c, (1, 0, 0, 0))
    assert p.sizes == {"paired": 1, "unpaired": 0, "speech_only": 0, "image_only": 0, "dev": 0, "test": 0}
    assert len(p.paired()) == 1


def test_desk_default_counts():
    c = generate_corpus(2900, WorldConfig(), seed=0)
    p = partition_corpus(c, (200, 700, 1000, 1000), seed=0)
    assert [p.sizes[k] for k in ("paired", "unpaired", "speech_only", "image_only")] == [200, 700, 1000, 1000]
    assert sorted(p.all_training_ids()) == list(range(2900))


_CACHE = {}


def _small_corpus():
    if "c" not in _CACHE:
        _CACHE["c"] = generate_corpus(60, WorldConfig(), seed=9)
    return _CACHE["c"]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 12), min_size=6, max_size=6), st.integers(0, 1000))
def test_partitions_disjoint_and_cover(sizes, seed):
    c = _small_corpus()
    if sum(sizes) > len(c):
        with pytest.raises(ValueError, match="oversubscribe"):
            partition_corpus(c, sizes, seed)
        return
    p = partition_corpus(c, sizes, seed)
    ids = [i for v in p.ids.values() for i in v]
    assert len(ids) == len(set(ids)) == sum(sizes)
    assert list(p.sizes.values()) == sizes


def test_unpaired_split_is_a_misaligned_permutation():
    c = generate_corpus(60, WorldConfig(), seed=9)
    p = partition_corpus(c, (5, 20, 5, 5), seed=3)
    ids = p.ids["unpaired"]
    key = lambda a: a.tobytes()
    assert Counter(map(key, p.unpaired_speech())) == Counter(key(c[i].speech) for i in ids)
    assert Counter(map(key, p.unpaired_text())) == Counter(key(c[i].caption) for i in ids)
    assert Counter(map(key, p.unpaired_images())) == Counter(key(c[i].regions) for i in ids)
    aligned = sum(np.array_equal(t, c[ids[k]].caption) for k, t in enumerate(p.unpaired_text()))
    assert aligned == 0


def test_single_modality_splits_expose_only_their_modality(partition):
    assert all(x.ndim == 2 and x.shape[1] == 8 for x in partition.speech_only())
    assert all(z.shape == (16, 12) for z in partition.image_only())
    for name in ("unpaired", "speech_only", "image_only"):
        with pytest.raises(KeyError):
            partition.paired(name)
    assert partition.pairing_of(partition.ids["speech_only"][0]) == "speech_only"
    assert partition.pairing_of(partition.ids["dev"][0]) is None


# -- persistence ----------------------------------------------------------------

def test_round_trip_is_bit_exact(tmp_path):
    c = generate_corpus(25, WorldConfig(sigma_spk=0.2), seed=6)
    path = tmp_path / "c.mmw"
    save_corpus(c, path)
    back = load_corpus(path)
    assert corpus_bytes(back) == corpus_bytes(c)
    assert back.seed == 6 and back.config == c.config
    for a, b in zip(c.examples, back.examples):
        assert a.scene == b.scene
        assert np.array_equal(a.speech, b.speech) and np.array_equal(a.regions, b.regions)


def test_corruption_errors_are_distinct():
    raw = bytearray(corpus_bytes(generate_corpus(5, seed=1)))
    flipped = raw.copy()
    flipped[60] ^= 0xFF
    with pytest.raises(CorpusChecksumError):
        corpus_from_bytes(bytes(flipped))
    with pytest.raises(CorpusTruncatedError):
        corpus_from_bytes(bytes(raw[:-10]))
    with pytest.raises(CorpusTruncatedError):
        corpus_from_bytes(bytes(raw[:8]))
    bumped = raw.copy()
    bumped[4] = 9
    with pytest.raises(CorpusVersionError):
        corpus_from_bytes(bytes(bumped))
    with pytest.raises(CorpusFormatError, match="magic"):
        corpus_from_bytes(b"XXXX" + bytes(raw[4:]))


def test_reloaded_corpus_gives_identical_metrics(tmp_path):
    from conftest import small_config
    from mmchain.chain import Chain
    from mmchain.schedule import evaluate

    c = generate_corpus(30, WorldConfig(), seed=2)
    save_corpus(c, tmp_path / "c.mmw")
    back = load_corpus(tmp_path / "c.mmw")
    reports = []
    for corpus in (c, back):
        part = partition_corpus(corpus, (10, 0, 0, 0, 10, 10), seed=0)
        reports.append(evaluate(Chain(small_config()), part.paired("test")))
    assert reports[0] == reports[1]

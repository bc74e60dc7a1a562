import pytest
import yaml

from mmchain.experiment import SCENARIOS, SpecError, load_spec, parse_spec


def _raw(**over):
    raw = {
        "seed": 1,
        "corpus": {"generate": {"n": 60, "world": {"sigma_spk": 0.2}}},
        "partition": [10, 10, 10, 10, 10, 10],
        "schedule": [{"name": "warm", "steps": [{"regime": "Type1", "dataset": "paired",
                                                 "batch_size": 4, "steps": 2}]}],
    }
    raw.update(over)
    return raw


@pytest.mark.parametrize("name", SCENARIOS)
def test_bundled_scenarios_parse(name):
    spec = load_spec(name)
    assert spec.seed == 0 and spec.config.seed == 0
    assert spec.schedule and spec.partition == [200, 700, 1000, 1000, 500, 500]


def test_scenario_block_structure():
    names = {s: [b.name for b in load_spec(s).schedule] for s in SCENARIOS}
    assert names["table3"] == ["Type1", "+Type2", "+Type3c"]
    assert names["table4"] == ["Type1", "+Type2", "+Type3b"]
    assert len(names["topline"]) == 1
    regimes = {st.regime for st in load_spec("table3").schedule[-1].steps}
    assert "Type3c" in regimes


def test_seed_propagates_and_with_seed():
    spec = parse_spec(_raw())
    assert spec.config.seed == 1
    other = spec.with_seed(7)
    assert other.seed == other.config.seed == 7 and spec.seed == 1


def test_config_overrides_and_ints_as_floats():
    spec = parse_spec(_raw(config={"margin": 1, "beam_size": 2}))
    assert spec.config.margin == 1.0 and spec.config.beam_size == 2


def test_every_problem_reported_at_once():
    raw = _raw(unknown=1, seed=-1, partition=[10, 10], config={"seed": 3, "hidden": "big", "nope": 1},
               eval_split="train")
    raw["schedule"][0]["steps"][0].update(regime="Type7", batch_size=0)
    with pytest.raises(SpecError) as err:
        parse_spec(raw)
    text = "\n".join(err.value.problems)
    for needle in ("unknown top-level key 'unknown'", "seed must be", "partition must list",
                   "top level", "config.hidden must be int", "unknown key 'nope'", "eval_split",
                   "unknown regime 'Type7'", "batch_size must be"):
        assert needle in text


def test_oversubscribed_partition_and_incompatible_schedule():
    with pytest.raises(SpecError, match="more than the corpus size"):
        parse_spec(_raw(partition=[50, 10, 10, 10, 10, 10]))
    bad = _raw()
    bad["schedule"][0]["steps"][0].update(regime="Type2a", dataset="image_only")
    with pytest.raises(SpecError, match="does not expose"):
        parse_spec(bad)
    with pytest.raises(SpecError, match="no non-empty 'dev'"):
        parse_spec(_raw(partition=[10, 10, 10, 10]))


def test_corpus_source_checks(tmp_path):
    with pytest.raises(SpecError, match="exactly one"):
        parse_spec(_raw(corpus={}))
    with pytest.raises(SpecError, match="does not exist"):
        parse_spec(_raw(corpus={"file": str(tmp_path / "missing.bin")}))
    with pytest.raises(SpecError, match="world: unknown key"):
        parse_spec(_raw(corpus={"generate": {"n": 60, "world": {"sigma": 1}}}))


def test_load_errors(tmp_path):
    with pytest.raises(SpecError, match="cannot read"):
        load_spec(tmp_path / "absent.yaml")
    p = tmp_path / "bad.yaml"
    p.write_text("seed: [unclosed\n")
    with pytest.raises(SpecError, match="YAML"):
        load_spec(p)


def test_dump_round_trip(tmp_path):
    spec = parse_spec(_raw(config={"hidden": 16}))
    spec.dump(tmp_path / "s.yaml")
    back = load_spec(tmp_path / "s.yaml")
    assert back.config == spec.config and back.partition == spec.partition
    assert yaml.safe_load((tmp_path / "s.yaml").read_text())["seed"] == 1


def test_build_corpus_from_generate_and_file(tmp_path):
    from mmchain.microworld import corpus_digest, save_corpus
    spec = parse_spec(_raw())
    corpus = spec.build_corpus()
    assert len(corpus) == 60 and corpus.seed == 1 and corpus.config.sigma_spk == 0.2
    save_corpus(corpus, tmp_path / "c.bin")
    from_file = parse_spec(_raw(corpus={"file": str(tmp_path / "c.bin")}))
    assert corpus_digest(from_file.build_corpus()) == corpus_digest(corpus)
    assert from_file.build_partition().sizes == spec.build_partition(corpus).sizes

import pytest
import yaml

from pgen import config as cfg
from pgen.errors import ConfigError


def _write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_defaults_and_merge(tmp_path):
    c = cfg.load(_write(tmp_path, "seed: 5\ntrainer: {max_steps: 7}\n"))
    assert c["seed"] == 5 and c["trainer"]["max_steps"] == 7 and c["trainer"]["accumulate"] == 1


def test_unknown_and_mistyped_keys(tmp_path):
    with pytest.raises(ConfigError, match="trainer.max_step"):
        cfg.load(_write(tmp_path, "trainer: {max_step: 7}\n"))
    with pytest.raises(ConfigError, match="trainer.max_steps"):
        cfg.load(_write(tmp_path, "trainer: {max_steps: many}\n"))
    with pytest.raises(ConfigError, match="missing.yaml"):
        cfg.load(str(tmp_path / "missing.yaml"))


def test_plugin_subtree_replaced_wholesale(tmp_path):
    c = cfg.load(_write(tmp_path, "search: {class: beam, beam: 2}\n"))
    assert c["search"] == {"class": "beam", "beam": 2}


def test_overrides_last_one_wins():
    c = cfg.merge(cfg.DEFAULTS, {})
    cfg.apply_override(c, "trainer.max_steps=3")
    cfg.apply_override(c, "trainer.max_steps=9")
    assert c["trainer"]["max_steps"] == 9
    cfg.apply_override(c, "search.beam=5")  # new key inside a plugin subtree
    assert c["search"]["beam"] == 5
    cfg.apply_override(c, "trainer.lr=0.001")
    assert c["trainer"]["lr"] == 0.001
    with pytest.raises(ConfigError, match="trainer.patience"):
        cfg.apply_override(c, "trainer.patience=abc")
    with pytest.raises(ConfigError):
        cfg.apply_override(c, "trainer.nope=1")
    with pytest.raises(ConfigError):
        cfg.apply_override(c, "no_equals_sign")


def test_numeric_lr_rejects_text():
    c = cfg.merge(cfg.DEFAULTS, {"trainer": {"lr": 0.5}})
    with pytest.raises(ConfigError, match="trainer.lr"):
        cfg.apply_override(c, "trainer.lr=abc")


def test_dump_round_trip(tmp_path):
    c = cfg.merge(cfg.DEFAULTS, {"seed": 3})
    again = cfg.load(_write(tmp_path, cfg.dump(c)))
    assert again == c and yaml.safe_load(cfg.dump(c)) == c


def test_derived_seeds_are_stable_and_distinct():
    assert cfg.derive_seed(1, "model") == cfg.derive_seed(1, "model")
    assert cfg.derive_seed(1, "model") != cfg.derive_seed(1, "sampler")
    assert cfg.derive_seed(1, "model") != cfg.derive_seed(2, "model")

import os

import pytest

from finsep.config import ConfigError, build_run_config, load_run_config, parse_pairs

BASE = {"seed": "1", "split_seed": "2", "manifest": "m.tsv", "out_dir": "runs"}


def test_parse_pairs():
    pairs = parse_pairs(["# comment", "", "a = 1", "b=two  # trailing", "c = x=y"])
    assert pairs == {"a": "1", "b": "two", "c": "x=y"}
    with pytest.raises(ConfigError, match="key = value"):
        parse_pairs(["oops"])


def test_required_seeds():
    for k in ("seed", "split_seed", "manifest", "out_dir"):
        pairs = dict(BASE)
        del pairs[k]
        with pytest.raises(ConfigError, match=k):
            build_run_config(pairs)


def test_defaults_and_paths(tmp_path):
    cfg = build_run_config(dict(BASE), str(tmp_path))
    assert cfg.manifest == os.path.join(str(tmp_path), "m.tsv")
    assert cfg.learning_rate == 1e-4 and cfg.epochs == 200 and cfg.alpha_f == 0.1
    assert cfg.chunk_spec.length == 44160 and cfg.chunk_spec.hop == 33120
    tc = cfg.train_config()
    assert tc.k_range == (0.0, 1.0) and tc.loss == "si_snr"


@pytest.mark.parametrize("key, value", [
    ("arch", "wavenet"), ("epochs", "-1"), ("learning_rate", "0"), ("precision", "float16"),
    ("k_min", "0.5"), ("chunk_overlap", "1.0"), ("model.frame_len", "7"), ("model.nope", "1"),
    ("bogus", "1"), ("seed", "one"),
])
def test_invalid_values(key, value):
    pairs = dict(BASE, **{key: value, "k_max": "0.25"} if key == "k_min" else {key: value})
    with pytest.raises(ConfigError):
        build_run_config(pairs)


def test_model_keys():
    cfg = build_run_config(dict(BASE, arch="demucs", **{"model.depth": "2", "model.channels": "4"}))
    mc = cfg.model_config()
    assert (mc.depth, mc.channels) == (2, 4)
    assert cfg.train_config().loss == "l1"


def test_overrides_win(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("seed = 1\nsplit_seed = 2\nmanifest = m.tsv\nout_dir = o\nepochs = 3\n")
    assert load_run_config(p, {"epochs": "7"}).epochs == 7
    assert load_run_config(p).out_dir == str(tmp_path / "o")


def test_validation_precedes_io(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("seed = 1\nsplit_seed = 2\nmanifest = m.tsv\nout_dir = o\narch = nope\n")
    with pytest.raises(ConfigError):
        load_run_config(p)
    assert not (tmp_path / "o").exists()

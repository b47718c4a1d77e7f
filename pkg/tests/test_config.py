import pytest

from tpgan import config
from tpgan.config import ExperimentConfig
from tpgan.errors import ValidationError


def test_roundtrip_default():
    cfg = ExperimentConfig()
    assert config.parse(config.serialize(cfg)) == cfg


def test_roundtrip_modified(tmp_path):
    cfg = config.parse(
        "dataset.source = idx:a.gz,b.gz\n"
        "split.minority_classes = 2, 5\n"
        "split.minority_count = 50\n"
        "split.majority_count = 150\n"
        "split.balanced_ratio = 0.4\n"
        "train.lam = 2.5\n"
        "train.iterations_per_epoch = 8\n"
        "train.profile = desk\n"
        "experiment.method = b-smote   # trailing comment\n"
        "experiment.repetitions = 3\n"
    )
    assert cfg.split.minority_classes == (2, 5)
    assert cfg.split.spec().minority_count == 50
    assert cfg.train.lam == 2.5 and cfg.train.iterations_per_epoch == 8
    path = config.save(cfg, tmp_path / "x.cfg")
    assert config.load(path) == cfg


def test_none_roundtrip():
    cfg = config.parse("train.iterations_per_epoch = none")
    assert cfg.train.iterations_per_epoch is None
    assert config.parse(config.serialize(cfg)) == cfg


def test_variant_follows_method():
    cfg = config.parse("experiment.method = gan-v2")
    assert cfg.variant == "v2"
    assert cfg.train_config(4).variant == "v2" and cfg.train_config(4).seed == 4
    assert config.parse("experiment.method = smote").variant == "baseline"
    assert "train.variant" not in config.serialize(cfg)


@pytest.mark.parametrize("text", [
    "nosuch.key = 1",
    "train.nosuch = 1",
    "train.variant = v1",
    "train.lam = ten",
    "train.batch_size = 0",
    "just words",
])
def test_rejects_bad_text(text):
    with pytest.raises(ValidationError):
        config.parse(text)


@pytest.mark.parametrize("text", [
    "experiment.method = gan-v4",
    "experiment.repetitions = 0",
    "dataset.channels = 2",
    "split.minority_classes = 0",
    "split.balanced_ratio = 2",
])
def test_validate(text):
    with pytest.raises(ValidationError):
        config.parse(text).validate()


def test_output_root_env(monkeypatch, tmp_path):
    cfg = config.parse("experiment.output_dir = runs/a")
    monkeypatch.delenv(config.OUTPUT_ROOT_ENV, raising=False)
    assert str(cfg.output_path()) == "runs/a"
    monkeypatch.setenv(config.OUTPUT_ROOT_ENV, str(tmp_path))
    assert cfg.output_path() == tmp_path / "runs/a"

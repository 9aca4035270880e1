import pytest

from embnav.config import (
    ConfigError, ExperimentConfig, load_config, parse_config, serialize_config,
)


def test_serialize_parse_round_trip_default():
    cfg = ExperimentConfig()
    text = serialize_config(cfg)
    again = parse_config(text)
    assert serialize_config(again) == text


def test_round_trip_preserves_every_field():
    cfg = ExperimentConfig()
    cfg.name = "custom"
    cfg.sim.grid_height = 9
    cfg.sim.object_count = 3
    cfg.task.kind = "rearrange"
    cfg.task.train_seeds = tuple(range(100))
    cfg.task.val_seeds = (7, 11, 13)
    cfg.train.lr = 0.00025
    cfg.agent.channels = 17
    cfg.probe.batch_size = 64
    again = parse_config(serialize_config(cfg))
    assert again.name == "custom"
    assert again.sim.grid_height == 9
    assert again.task.kind == "rearrange"
    assert again.task.train_seeds == tuple(range(100))
    assert again.task.val_seeds == (7, 11, 13)
    assert again.train.lr == 0.00025
    assert again.agent.channels == 17
    assert again.probe.batch_size == 64


def test_seed_range_codec():
    cfg = ExperimentConfig()
    cfg.task.train_seeds = tuple(range(64))
    text = serialize_config(cfg)
    assert "0:64" in text
    assert parse_config(text).task.train_seeds == tuple(range(64))


def test_unknown_key_reports_line(tmp_path):
    cfg_path = tmp_path / "bad.cfg"
    text = serialize_config(ExperimentConfig())
    lines = text.splitlines()
    lines.insert(lines.index("[sim]") + 1, "gravity = 9.8")
    cfg_path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ConfigError) as exc:
        load_config(str(cfg_path))
    msg = str(exc.value)
    assert "gravity" in msg
    assert "bad.cfg:" in msg


def test_unknown_section_rejected():
    text = serialize_config(ExperimentConfig()) + "\n[physics]\nfoo = 1\n"
    with pytest.raises(ConfigError):
        parse_config(text)


def test_schema_version_mismatch():
    text = serialize_config(ExperimentConfig())
    text = text.replace("schema_version = 1", "schema_version = 99")
    with pytest.raises(ConfigError):
        parse_config(text)


def test_bad_value_type_rejected():
    text = serialize_config(ExperimentConfig())
    text = text.replace("total_steps = ", "total_steps = lots  # ", 1)
    with pytest.raises(ConfigError):
        parse_config(text)


def test_validate_rejects_bad_task_kind():
    cfg = ExperimentConfig()
    cfg.task.kind = "flying"
    with pytest.raises(ConfigError):
        cfg.validate()


def test_validate_rejects_nonpositive_training():
    cfg = ExperimentConfig()
    cfg.train.lr = 0.0
    with pytest.raises(ConfigError):
        cfg.validate()


def test_validate_zeroshot_rejects_overlap():
    cfg = ExperimentConfig()
    cfg.zeroshot.seen = (0, 1, 2)
    cfg.zeroshot.unseen = (2, 3)
    with pytest.raises(ConfigError):
        cfg.validate_zeroshot()


def test_load_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.cfg"))

import pytest

from motionlift.config import Config, default_config_text
from motionlift.errors import SchemaError


def test_defaults_valid():
    cfg = Config()
    assert cfg["schedule.steps"] == 100
    assert cfg["training.lr"] == 1e-4
    assert cfg["sds.subject_center"] == (0.0, 0.0, 4.0)


def test_load_and_save_round_trip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nseed = 7\nschedule.steps = 50\n"
                    "sds.subject_center = 1.0, 2.0, 3.5\n")
    cfg = Config.load(path)
    assert cfg["seed"] == 7
    assert cfg["schedule.steps"] == 50
    assert cfg["sds.subject_center"] == (1.0, 2.0, 3.5)
    out = tmp_path / "canon.cfg"
    cfg.save(out)
    again = Config.load(out)
    assert again.digest() == cfg.digest()


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("bogus.key = 1\n")
    with pytest.raises(SchemaError) as e:
        Config.load(path)
    assert "bogus.key" in str(e.value)


def test_invalid_values_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("training.drop_rate = 1.5\n")
    with pytest.raises(SchemaError):
        Config.load(path)
    path.write_text("schedule.steps = ten\n")
    with pytest.raises(SchemaError):
        Config.load(path)
    path.write_text("model.kernel = 4\n")  # must be odd
    with pytest.raises(SchemaError):
        Config.load(path)


def test_duplicate_key_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 1\nseed = 2\n")
    with pytest.raises(SchemaError):
        Config.load(path)


def test_malformed_line_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("just some words\n")
    with pytest.raises(SchemaError):
        Config.load(path)


def test_cross_field_validation():
    with pytest.raises(SchemaError):
        Config({"sds.n_band_low": 0.9, "sds.n_band_high": 0.1})
    with pytest.raises(SchemaError):
        Config({"schedule.beta_start": 0.5, "schedule.beta_end": 0.1})


def test_digest_changes_with_values():
    assert Config().digest() != Config({"seed": 1}).digest()
    assert Config().digest() == Config().digest()


def test_subconfig_builders():
    cfg = Config({"sds.ring_radius": 2.5, "recon.lambda_smooth": 0.3})
    sched = cfg.schedule()
    assert sched.N == 100
    lift = cfg.lift_config()
    assert lift.ring_radius == 2.5
    assert lift.views == 4
    assert cfg.object_fit_config().lambda_smooth == 0.3
    assert cfg.triangulation_config().method == "gauss_newton"
    assert cfg.chamfer_config().restarts == 200


def test_default_config_text_loads(tmp_path):
    path = tmp_path / "default.cfg"
    path.write_text(default_config_text())
    cfg = Config.load(path)
    assert cfg.digest() == Config().digest()


def test_choice_validation():
    with pytest.raises(SchemaError):
        Config({"recon.triangulation_method": "newton"})
    cfg = Config({"recon.triangulation_method": "gradient_descent"})
    assert cfg.triangulation_config().method == "gradient_descent"

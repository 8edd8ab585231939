import json

import pytest

from frcnet.config import PRESETS, ConfigError, RunConfig, load_config
from frcnet.oscillator import NyquistError


def test_defaults():
    cfg = load_config()
    assert cfg.preset == "ls1" and cfg.seed == 0
    assert cfg.training.epochs == 100
    assert cfg.curriculum_config().band_lo == 0.8
    ic, fcfg = cfg.forecast_config()
    assert ic == (0.2, 0.0) and fcfg.n_steps == 10000 and fcfg.forcing.omega == 3.77
    assert cfg.frc_config().n_points == 500


def test_presets():
    assert set(PRESETS) == {"ls1", "ls1a", "ls1b", "ls1-base"}
    base = load_config(preset="ls1-base")
    assert base.training.epochs == 1000 and base.frc_config().kind == "harmonic_base"
    a = load_config(preset="ls1a")
    assert a.system.omega_n == pytest.approx(11.30)
    # dimensional presets keep the frequency ratio grid and scale ICs by A / omega_n^2
    assert a.frc_config().ic[0] == pytest.approx(0.2 / 11.30**2)
    for name in PRESETS:
        load_config(preset=name).check_nyquist()
    with pytest.raises(ConfigError):
        load_config(preset="nope")


def test_file_override_and_seed(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"training": {"epochs": 7}, "seed": 3}))
    cfg = load_config(p)
    assert cfg.training.epochs == 7 and cfg.seed == 3
    assert load_config(p, seed=9).seed == 9
    assert cfg.model_spec().seed == 4 and cfg.curriculum_config().seed == 3


@pytest.mark.parametrize("doc,match", [
    ({"bogus": 1}, "unknown top-level"),
    ({"training": {"epoch": 3}}, "unknown key"),
    ({"training": {"epochs": 0}}, "epochs"),
    ({"seed": -1}, "seed"),
    ({"seed": "1"}, "seed"),
    ({"format_version": 99}, "format_version"),
    ({"model": {"variant": "V9"}}, "variant"),
    ({"system": {"xi": 0}}, "damping"),
    ({"curriculum": {"band": [2.0, 1.0]}}, "band"),
    ({"frc": {"kind": "harmonic_base"}}, "forcing_kind"),
    ({"training": "fast"}, "expected an object"),
])
def test_invalid_configs(tmp_path, doc, match):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match=match):
        load_config(p)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "x.json").write_text("{oops")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(tmp_path / "x.json")


def test_hash_tracks_content():
    a = load_config()
    assert a.hash() == load_config().hash()
    assert a.hash() != load_config(seed=1).hash()
    assert RunConfig.from_dict(json.loads(a.dumps())).hash() == a.hash()


def test_nyquist_check():
    cfg = RunConfig.from_dict({"frc": {"band": [0.1, 400.0]}})
    with pytest.raises(NyquistError):
        cfg.check_nyquist()


def test_sweep_spec():
    cfg = RunConfig.from_dict({"sweep": {"kind": "bandwidth", "grid": [0.5, 1.0],
                                         "groups": [2.0], "epochs": 5}})
    spec = cfg.sweep_spec()
    assert spec.kind == "bandwidth" and spec.grid == (0.5, 1.0) and spec.training.epochs == 5
    assert cfg.sweep_spec("band_center").kind == "band_center"
    with pytest.raises(ConfigError):
        cfg.sweep_spec("nope")
    with pytest.raises(ConfigError, match="empty"):
        RunConfig.from_dict({"sweep": {"grid": []}}).sweep_spec()

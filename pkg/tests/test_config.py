from pathlib import Path

import pytest

from forgevqe.config import ConfigError, load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.ini")))
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.model().n_modes > 0


def test_defaults_and_tolerance_choice(tmp_path):
    cfg = load_config(write(tmp_path, "[model]\nkind = fh\n"))
    assert cfg.model_params["n_sites"] == 4 and cfg.cuts == 0
    assert cfg.loop_options().infidelity_tol == 1e-5
    cfg1 = load_config(write(tmp_path, "[model]\nkind = fh\n[run]\ncuts = 1\n"))
    assert cfg1.loop_options().infidelity_tol == 0.0
    assert cfg1.forge_options().layers == 1


def test_scan_section(tmp_path):
    cfg = load_config(write(tmp_path, "[model]\nkind = fh\n[scan]\nt_m = 0, 0.5 1.0\nchi = 3\n"))
    assert cfg.scan_t_m == [0.0, 0.5, 1.0] and cfg.scan_chi == 3


def test_interaction_path_is_relative_to_config(tmp_path):
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "x.int").write_text((CONFIGS / "toy_j52_pn.int").read_text())
    cfg = load_config(write(tmp_path, "[model]\nkind = nsm\ninteraction = sub/x.int\nz = 2\nn = 4\n"))
    assert cfg.model().basis().dim > 0


@pytest.mark.parametrize("text,fragment", [
    ("[model]\nkind = fh\n[bogus]\n", "unknown section"),
    ("[model]\nkind = fh\nfoo = 1\n", "unknown key"),
    ("[run]\ncuts = 1\n", "missing \\[model\\]"),
    ("[model]\nkind = ising\n", "kind must be"),
    ("[model]\nkind = fh\nn_sites = 3\n", "out of range"),
    ("[model]\nkind = fh\nu = abc\n", "not a valid number"),
    ("[model]\nkind = fh\nu = nan\n", "not a valid number"),
    ("[model]\nkind = fh\n[run]\ncuts = 2\n", "cuts = 0 or 1"),
    ("[model]\nkind = fh\n[run]\ncuts = 3\n", "out of range"),
    ("[model]\nkind = fh\n[run]\nlam_mode = free\n", "lam_mode"),
    ("[model]\nkind = fh\n[run]\ntiming = maybe\n", "boolean"),
    ("[model]\nkind = nsm\nz = 2\nn = 2\n", "interaction is required"),
    ("[model]\nkind = nsm\ninteraction = missing.int\nz = 2\nn = 2\n", "cannot read interaction"),
    ("[model]\nkind = fh\nkind = nsm\n", "malformed"),
])
def test_invalid_configs(tmp_path, text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        load_config(write(tmp_path, text))


def test_bad_interaction_file(tmp_path):
    (tmp_path / "bad.int").write_text("MODE 0 2 0 -1 s\n")
    with pytest.raises(ConfigError, match="interaction file"):
        load_config(write(tmp_path, "[model]\nkind = nsm\ninteraction = bad.int\nz = 0\nn = 0\n"))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "none.ini")

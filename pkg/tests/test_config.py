import json

import pytest

from certify import TOL_GAMMA, Component
from config import (
    ENV_MAPPINGS,
    ConfigError,
    ConfigManager,
    FixedPointSection,
    KernelSpec,
    list_scenarios,
)
from matlaw import StretchKind
from nlsolve import NonlinearKind


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ENV_MAPPINGS:
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def manager(tmp_path):
    return ConfigManager(dotenv_path=str(tmp_path / "missing.env"))


def test_defaults(manager):
    config = manager.load_config()
    assert config.scenario == "custom"
    assert config.certify.tol_gamma == TOL_GAMMA
    assert config.certify_component() == Component.ELECTRIC
    assert manager.sources == ["defaults"]


def test_scenario_then_file_layering(manager, tmp_path):
    user_file = tmp_path / "user.toml"
    user_file.write_text("[material]\neps_inf = 2.0\n\n[certify]\nt_count = 129\n", encoding="utf-8")
    config = manager.load_config("debye", user_file)
    assert config.scenario == "debye"
    assert config.material.eps_inf == 2.0
    assert config.material.debye[0].a == 1.0
    assert config.certify.clause_checks and config.certify.t_count == 129
    assert manager.sources[-1] == str(user_file)


def test_json_config_file(manager, tmp_path):
    user_file = tmp_path / "user.json"
    user_file.write_text(json.dumps({"stretch": {"kind": "cfs", "sigma": 1.0, "alpha": 0.5}}), encoding="utf-8")
    config = manager.load_config(config_path=user_file)
    assert config.stretch.kind == StretchKind.CFS
    assert config.certify_component() == Component.BOTH


def test_environment_wins(manager, monkeypatch, tmp_path):
    monkeypatch.setenv("DISPML_TOL_GAMMA", "1e-6")
    monkeypatch.setenv("DISPML_OUT_DIR", str(tmp_path))
    config = manager.load_config("debye")
    assert config.certify.tol_gamma == 1e-6
    assert config.output.out_dir == str(tmp_path)
    assert "DISPML_TOL_GAMMA" in manager.sources


def test_bad_environment_value(manager, monkeypatch):
    monkeypatch.setenv("DISPML_SEED", "abc")
    with pytest.raises(ConfigError):
        manager.load_config()


def test_unknown_scenario_lists_available(manager):
    with pytest.raises(ConfigError, match="debye"):
        manager.load_config("no-such-scenario")


def test_unknown_keys_are_collected(manager, tmp_path):
    user_file = tmp_path / "user.toml"
    user_file.write_text("[certify]\nbogus = 1\n\n[material]\neps_inf = -1.0\n", encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        manager.load_config(config_path=user_file)
    assert len(excinfo.value.errors) == 2


def test_unparseable_file(manager, tmp_path):
    user_file = tmp_path / "broken.toml"
    user_file.write_text("[material\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="cannot parse"):
        manager.load_config(config_path=user_file)
    with pytest.raises(ConfigError, match="not found"):
        manager.load_config(config_path=tmp_path / "absent.toml")


def test_instantaneous_nonlinearity_rejected(manager):
    with pytest.raises(ConfigError) as excinfo:
        manager.load_config(overrides={"fixedpoint.kind": "instantaneous"})
    assert any("zero-delay" in error for error in excinfo.value.errors)


def test_quadratic_needs_two_argument_kernel():
    with pytest.raises(ValueError):
        FixedPointSection(kind="quadratic", kernel=KernelSpec(shape="exponential"))
    with pytest.raises(ValueError):
        FixedPointSection(kind="quadratic", kernel=KernelSpec(shape="separable", vanish_on_axes=False))


def test_box_kernel_is_moved_off_the_axes():
    section = FixedPointSection(kind="quadratic", kernel=KernelSpec(shape="box", t_max=1.0))
    nl = section.build(0.1)
    assert nl.kind == NonlinearKind.QUADRATIC
    assert not nl.kernel2.touches_axes()
    assert nl.dt == 0.1


def test_saturable_kernel_sampled_at_given_step():
    nl = FixedPointSection(kernel=KernelSpec(shape="exponential", theta=0.5, t_max=1.0)).build(0.05)
    assert nl.kernel.dt == 0.05
    assert nl.kernel.values.size == 21


def test_cross_section_checks_follow_requested_sections(manager):
    config = manager.load_config(overrides={
        "stretch": {"kind": "cfs", "sigma": 1.0, "alpha": 0.0},
        "simulate.dx": 0.1,
        "simulate.dt": 0.5,
        "fixedpoint.kernel": {"shape": "csv", "path": "/nonexistent/kernel.csv"},
    })
    everything = manager.validate_config(config)
    assert any(error.startswith("stretch:") for error in everything)
    assert any("CFL" in error for error in everything)
    assert any("kernel file not found" in error for error in everything)
    assert manager.validate_config(config, sections=("assemble",)) == []


def test_assemble_combination_checked(manager):
    config = manager.load_config(overrides={"assemble.variant": "cfs-vacuum", "material.debye": [[1.0, 1.0]],
                                            "stretch": {"kind": "cfs", "sigma": 1.0, "alpha": 1.0}})
    errors = manager.validate_config(config, sections=("assemble",))
    assert len(errors) == 1 and errors[0].startswith("assemble:")


def test_get_and_update_setting(manager):
    manager.load_config("cfs-vacuum")
    assert manager.get_setting("stretch.kind") == "cfs"
    assert manager.get_setting("certify.nothing", "fallback") == "fallback"
    manager.update_setting("certify.t_count", 257)
    assert manager.get_setting("certify.t_count") == 257
    with pytest.raises(ConfigError):
        manager.update_setting("certify.t_count", 1)
    assert json.loads(manager.export_config())["scenario"] == "cfs-vacuum"


def test_every_shipped_scenario_loads(manager):
    names = list_scenarios()
    assert {"debye", "lorentz", "saturable", "cfs-reflection"} <= set(names)
    for name in names:
        config = manager.load_config(name)
        assert config.description

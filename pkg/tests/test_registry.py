import json

import pytest

from cpbvlab import qubit
from cpbvlab.config import ConfigError
from cpbvlab.registry import ENV_VAR, get_device, load_registry, registry_list

TABLE_FIELDS = {"resonator_frequency", "q_loaded", "q_internal", "q_external",
                "qubit_frequency_range", "e_j_max", "e_c", "c_g", "g", "t1", "t2_star",
                "t_echo", "t_prime", "sq_1hz", "sq_4p5ghz"}


@pytest.fixture(autouse=True)
def _no_env(monkeypatch):
    monkeypatch.delenv(ENV_VAR, raising=False)


def test_builtin_devices_listed_with_all_fields():
    devices = {d["name"]: d for d in registry_list()}
    assert set(devices) == {"device1", "device2"}
    for d in devices.values():
        assert TABLE_FIELDS <= set(d)
    assert devices["device1"]["e_c"] == "6.24 GHz"
    assert devices["device1"]["e_j_max"] == "19 GHz"
    assert devices["device2"]["c_g"] == "19.1 aF"
    assert devices["device2"]["g"] == "10-15 MHz"


def test_model_matches_table():
    d1, d2 = get_device("device1"), get_device("device2")
    assert (d1.cpb.e_c, d1.cpb.e_j_max) == (6.24, 19.0)
    assert (d2.cpb.e_c, d2.cpb.e_j_max, d2.cpb.c_g) == (4.3, 7.33, 19.1)
    assert 10.0 <= d2.g <= 15.0
    for d in (d1, d2):
        r = d.resonator
        assert 1 / r.q_loaded == pytest.approx(1 / r.q_external + 1 / r.q_internal, rel=0.05)


def test_device2_mask_and_defects():
    d2 = get_device("device2")
    assert not d2.visible(5.5) and d2.visible(4.8) and d2.visible(6.8)
    assert len(d2.defect_model().branches) == 4
    assert get_device("device1").defect_model() is None


def test_coupling_model_drop_above_resonator():
    d1 = get_device("device1")
    below, above = d1.at_ej(5.0), d1.at_ej(6.0)
    assert above.t1 < below.t1 / 3
    assert d1.at_ej(4.5).t1 == pytest.approx(205e-6, rel=1e-3)
    assert d1.at_ej(4.5).cpb.e_j == pytest.approx(4.5)


def test_unknown_device():
    with pytest.raises(ConfigError, match="unknown device"):
        get_device("device9")


def test_empty_registry_lists_builtins(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("")
    assert [d["name"] for d in registry_list(str(path))] == ["device1", "device2"]


def _custom_entry():
    with open(qubit.__file__.replace("qubit.py", "data/devices.json")) as fh:
        entry = json.load(fh)["device1"]
    entry["label"] = "Device 3"
    entry["model"]["t1"] = "30 us"
    return {"device3": entry}


def test_env_override_adds_device(tmp_path, monkeypatch):
    path = tmp_path / "extra.json"
    path.write_text(json.dumps(_custom_entry()))
    monkeypatch.setenv(ENV_VAR, str(path))
    reg = load_registry()
    assert set(reg) == {"device1", "device2", "device3"}
    assert reg["device3"].t1 == pytest.approx(30e-6)


@pytest.mark.parametrize("text", ["{not json", "[1, 2]", json.dumps({"bad": {"label": "x"}})])
def test_bad_registry_files(tmp_path, text):
    path = tmp_path / "bad.json"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_registry(str(path))


def test_missing_registry_file(tmp_path):
    with pytest.raises(ConfigError):
        load_registry(str(tmp_path / "nope.json"))

import warnings

from pytest import raises

from motiftree import config


def test_defaults(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    for key in ("MOTIFTREE_THREADS", "MOTIFTREE_REPLICATES", "MOTIFTREE_SEED"):
        monkeypatch.delenv(key, raising=False)
    settings = config.Settings()
    assert settings.get_int("threads") == 1
    assert settings.get_int("replicates") == 100
    assert settings["log_level"] == "WARNING"


def test_config_file_then_env(monkeypatch, tmp_path):
    (tmp_path / ".motiftree.toml").write_text("threads = 3\nreplicates = 50\n")
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("MOTIFTREE_THREADS", "6")
    monkeypatch.delenv("MOTIFTREE_REPLICATES", raising=False)
    settings = config.Settings()
    assert settings.get_int("replicates") == 50
    assert settings.get_int("threads") == 6


def test_set_value(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    settings = config.Settings()
    settings.seed = 9
    assert settings["seed"] == "9"
    settings["threads"] = 2
    assert settings.threads == "2"


def test_bad_config_file_warns(monkeypatch, tmp_path):
    (tmp_path / ".motiftree.toml").write_text("threads = = 3\n")
    monkeypatch.chdir(tmp_path)
    settings = config.Settings()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        settings["replicates"]
    assert any("error reading config file" in str(w.message) for w in caught)


def test_get_int_rejects_text(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("MOTIFTREE_THREADS", "many")
    settings = config.Settings()
    with raises(ValueError, match="'threads' must be an integer"):
        settings.get_int("threads")


def test_unknown_attribute(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    settings = config.Settings()
    with raises(AttributeError):
        settings.not_a_setting


def test_load_toml(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text('n = 100\ndgp = "null"\n[hyperparams]\ngamma = 0.5\n')
    assert config.load_toml(path) == {"n": 100, "dgp": "null", "hyperparams": {"gamma": 0.5}}

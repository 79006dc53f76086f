import json

import pytest

from posehyp.config import ENV_DICT, ENV_MODEL, ConfigError, RunConfig, load_config


def test_defaults():
    cfg = RunConfig()
    assert cfg.seed == 0 and cfg.k == 5 and cfg.tau_factor == 0.25 and cfg.missing_threshold == 0.002
    assert cfg.constrain_head and cfg.sampling == "chain"


def test_precedence(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"k": 7, "tau_factor": 0.5, "model_path": "file.json"}))
    env = {ENV_MODEL: "env.json", ENV_DICT: "d.json"}
    cfg = load_config(p, env=env, k=3)
    assert cfg.k == 3
    assert cfg.tau_factor == 0.5
    assert cfg.model_path == "env.json" and cfg.dict_path == "d.json"
    assert load_config(p, env={}).model_path == "file.json"


def test_seed_zero_allowed_other_zero_rejected():
    assert RunConfig(seed=0).seed == 0
    with pytest.raises(ConfigError, match="k"):
        RunConfig(k=0)
    with pytest.raises(ConfigError, match="tau_factor"):
        RunConfig(tau_factor=-1.0)


@pytest.mark.parametrize(
    "field,value",
    [("k", 2.5), ("k", True), ("tau_factor", "big"), ("sampling", "gibbs"), ("fallback", 1)],
)
def test_type_errors(field, value):
    with pytest.raises(ConfigError, match=field):
        RunConfig(**{field: value})


def test_unknown_field_and_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"colour": 1}))
    with pytest.raises(ConfigError, match="colour"):
        load_config(p, env={})
    p.write_text("{\n  bad")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(p, env={})
    p.write_text("[1]")
    with pytest.raises(ConfigError, match="object"):
        load_config(p, env={})


def test_int_promoted_to_float():
    cfg = RunConfig(tau_factor=1)
    assert isinstance(cfg.tau_factor, float)


def test_digest_dict_drops_paths():
    d = RunConfig(model_path="m.json").digest_dict()
    assert "model_path" not in d and "dict_path" not in d and d["k"] == 5

import pytest
from hypothesis import given, strategies as st

from landmark.config import ConfigError, RunConfig, env_overrides, parse_text, resolve


def test_canonical_text_roundtrip():
    cfg = RunConfig(mu=0.3, enable_lcm=False, k_list="5,10")
    text = cfg.to_text()
    assert RunConfig.from_text(text) == cfg
    assert RunConfig.from_text(text).to_text() == text
    assert text.splitlines() == sorted(text.splitlines())


@given(st.floats(0, 1), st.integers(0, 2**31), st.booleans(), st.floats(1e-6, 10))
def test_roundtrip_property(mu, seed, flag, lr):
    cfg = RunConfig(mu=mu, seed=seed, enable_eem=flag, lr=lr)
    assert RunConfig.from_text(cfg.to_text()).to_text() == cfg.to_text()


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        resolve(overrides={"learning_rate": 0.1})
    with pytest.raises(ConfigError):
        RunConfig.from_text("nope = 1\n")
    with pytest.raises(ConfigError):
        env_overrides({"LANDMARK_BOGUS": "1"})


@pytest.mark.parametrize("kw", [dict(mu=1.5), dict(task="sgdet"), dict(lr=0.0), dict(k_list="0,5"),
                                dict(topn_list="a"), dict(context_dim=30, lcm_heads=4), dict(workers=0)])
def test_invalid_values(kw):
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(**kw)


def test_type_coercion():
    cfg = resolve(overrides={"iterations": "12", "enable_lam": "off", "mu": "0.25"})
    assert cfg.iterations == 12 and cfg.enable_lam is False and cfg.mu == 0.25
    with pytest.raises(ConfigError):
        resolve(overrides={"iterations": "1.5"})
    with pytest.raises(ConfigError):
        resolve(overrides={"enable_lam": "maybe"})


def test_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# file layer\nmu = 0.2\nseed = 5\niterations = 7\n")
    env = {"LANDMARK_SEED": "6", "LANDMARK_ITERATIONS": "8", "HOME": "/x"}
    cfg = resolve(path=path, environ=env, overrides={"iterations": 9})
    assert (cfg.mu, cfg.seed, cfg.iterations) == (0.2, 6, 9)


def test_json_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text('{"mu": 0.4, "enable_eem": false}')
    cfg = resolve(path=path)
    assert cfg.mu == 0.4 and not cfg.enable_eem
    with pytest.raises(ConfigError):
        parse_text("[1, 2]")


def test_malformed_line():
    with pytest.raises(ConfigError, match="line 2"):
        parse_text("mu = 0.1\njunk\n")


def test_list_properties():
    cfg = RunConfig(k_list="20,50,100", topn_list="1,5")
    assert cfg.ks == (20, 50, 100) and cfg.ns == (1, 5)
    assert resolve(overrides={"k_list": [1, 2]}).ks == (1, 2)


def test_synth_view_carries_data_keys():
    cfg = RunConfig(n_train=33, zipf_exponent=0.5)
    sc = cfg.synth()
    assert sc.n_train == 33 and sc.zipf_exponent == 0.5

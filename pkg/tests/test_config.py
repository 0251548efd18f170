import pytest

from fedcache.config import Config, ConfigError, parse_assignments


def test_overrides_and_dotted_keys():
    cfg = Config().with_overrides({"rounds": 5, "cost.rtt_s": 0.02, "compute.Eval": 3, "store.root": "/x"})
    assert cfg.rounds == 5 and cfg.cost.rtt_s == 0.02 and cfg.compute["Eval"] == 3.0 and cfg.store_root == "/x"
    assert Config().rounds == 1000


@pytest.mark.parametrize("flat", [{"nope": 1}, {"cost.nope": 1}, {"compute.Training": 1}, {"rounds": "many"},
                                  {"policy": "mru"}, {"per_round": 500}, {"rounds": 1.5}])
def test_bad_values_rejected(flat):
    with pytest.raises(ConfigError):
        Config().with_overrides(flat)


def test_toml_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('policy = "lru"\n[cost]\nrtt_s = 0.03\n')
    cfg = Config.load(p, {"seed": 9})
    assert (cfg.policy, cfg.cost.rtt_s, cfg.seed) == ("lru", 0.03, 9)
    p.write_text("policy = [")
    with pytest.raises(ConfigError):
        Config.load(p)


def test_parse_assignments():
    assert parse_assignments(["a=1", "b=0.5", "c=lru", 'd="x y"', "e=true"]) == {
        "a": 1, "b": 0.5, "c": "lru", "d": "x y", "e": True}
    with pytest.raises(ConfigError):
        parse_assignments(["novalue"])


def test_units():
    cfg = Config()
    assert cfg.model_size_bytes == 84_500_000
    assert cfg.capacity_bytes == 10 * 2**30
    assert cfg.capacity_bytes // cfg.model_size_bytes == 127

import pytest

from avrl.config import ConfigError, RunConfig, parse_config


def test_empty_file_gives_defaults_and_stable_hash(tmp_path):
    path = tmp_path / "empty.ini"
    path.write_text("")
    a, b = parse_config(path), parse_config(text="")
    assert a == b
    assert a.hash() == b.hash() == parse_config(path).hash()
    assert a.env.fovea == 20 and a.agent.kind == "sugarl" and a.run.preset == "desk"
    assert a.seeds == (0,)


def test_canonical_form_is_sorted_lf():
    text = parse_config(text="").canonical()
    lines = text.splitlines()
    assert lines == sorted(lines)
    assert "\r" not in text and text.endswith("\n")


def test_fovea_fifty_ok_hundred_rejected():
    assert parse_config(text="[env]\nfovea = 50\n").env.fovea == 50
    with pytest.raises(ConfigError, match=r"env\.fovea"):
        parse_config(text="[env]\nfovea = 100\n")


@pytest.mark.parametrize("text,key", [
    ("[env]\nfoo = 1\n", r"env\.foo"),
    ("[nonsense]\nx = 1\n", "nonsense"),
    ("[agent]\nlr = fast\n", r"agent\.lr"),
    ("[agent]\nbalance = maybe\n", r"agent\.balance"),
    ("[agent]\nkind = sweeper\n", r"agent\.kind"),
    ("[agent]\nnet_input = 20\n", r"agent\.net_input"),
    ("[pvm]\nsteps = 0\n", r"pvm\.steps"),
    ("[env]\ncontrol_mode = relative\n[agent]\nkind = raster_scan\n", "raster_scan"),
])
def test_errors_name_the_key(text, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(text=text)


def test_presets_fill_agent_defaults():
    desk, paper = parse_config(text=""), parse_config(text="", preset="paper")
    assert (desk.agent.learning_start, desk.agent.net_input) == (5_000, 42)
    assert (paper.agent.learning_start, paper.agent.total_steps, paper.agent.net_input) == \
        (80_000, 1_000_000, 84)
    explicit = parse_config(text="[agent]\nlearning_start = 7\n", preset="paper")
    assert explicit.agent.learning_start == 7
    assert desk.hash() != paper.hash()


def test_seed_list_and_model_hash():
    cfg = parse_config(text="[run]\nseeds = 1, 2, 3\n")
    assert cfg.seeds == (1, 2, 3)
    other_seed = cfg.replace(env={"seed": 9})
    assert other_seed.model_hash() == cfg.model_hash()
    assert other_seed.hash() != cfg.hash()
    assert cfg.replace(env={"fovea": 50}).model_hash() != cfg.model_hash()


def test_replace_revalidates():
    with pytest.raises(ConfigError):
        RunConfig().replace(env={"fovea": 0})

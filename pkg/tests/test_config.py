import pytest

from introspective_bbrl.bbrl import ActorCriticConfig
from introspective_bbrl.config import ConfigError, RunConfig
from introspective_bbrl.introspection import WiringVariant


def test_defaults():
    c = RunConfig()
    assert c.fe_sizes == (128, 128) and c.vae_input_dim == 256
    assert c.encoder_sizes == (400, 128) and c.latent_dim == 50 and c.decoder_sizes == (128, 400)
    assert c.collect_episodes == 2000 and c.vae_epochs == 100 and c.train_fraction == 0.8
    assert c.ac_episodes == 2000 and c.stage_episodes == (500, 300, 500)


def test_text_round_trip():
    c = RunConfig(seed=7, variant=WiringVariant.MEANS_ONLY, noise_level=0.05,
                  encoder_sizes=(32, 16), actor_critic=ActorCriticConfig(gamma=0.5, normalize_advantage=False))
    text = c.to_text()
    assert RunConfig.from_text(text) == c
    assert RunConfig.from_text(text).to_text() == text


def test_empty_text_is_default():
    assert RunConfig.from_text("") == RunConfig()


def test_partial_file(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[run]\nseed = 4\nvariant = Means-Logvar\n[env]\nhorizon = 30\n[actor_critic]\ngamma = 0.9\n")
    c = RunConfig.load(path)
    assert c.seed == 4 and c.variant is WiringVariant.MEANS_LOGVAR
    assert c.env.horizon == 30 and c.actor_critic.gamma == 0.9
    assert c.ac_episodes == 2000


@pytest.mark.parametrize("text, message", [
    ("[network]\nfe_sizes = 128, 64\n", "sum to 192"),
    ("[run]\nnoise_level = 2\n", "noise_level"),
    ("[run]\nseed = one\n", "bad value"),
    ("[run]\nvariant = none\n", "variant"),
    ("[model]\nx = 1\n", "unknown config section"),
    ("[training]\nepochs = 3\n", "unknown key"),
    ("[env]\nhorizon = 0\n", "horizon"),
    ("[actor_critic]\ngamma = 3\n", "gamma"),
    ("seed = 3\n", "unreadable"),
])
def test_invalid_configs(text, message):
    with pytest.raises(ConfigError, match=message):
        RunConfig.from_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        RunConfig.load(tmp_path / "nope.ini")
    assert RunConfig.load(None) == RunConfig()


def test_snapshot_text_omits_output_dir():
    a, b = RunConfig(out_dir="one"), RunConfig(out_dir="two")
    assert a.to_text(include_output=False) == b.to_text(include_output=False)
    assert "out_dir" in a.to_text() and "out_dir" not in a.to_text(include_output=False)

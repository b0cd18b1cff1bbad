import pytest

from histat.config import DEFAULTS, RunConfig
from histat.errors import ConfigError
from histat.harness import TrainConfig
from histat.model import ModelConfig


def test_defaults_cover_model_and_training():
    cfg = RunConfig()
    assert cfg.model_config() == ModelConfig()
    assert cfg.train_config() == TrainConfig()
    for key in ("data", "eval_data", "out", "checkpoint", "num", "seed", "library_seed"):
        assert key in DEFAULTS


def test_parse_comments_and_types():
    text = """
    # a comment
    alpha_k = 32   # trailing comment
    k = 8
    lambda_temp = 0.2
    hierarchical = false
    encoder_hidden = 64, 32
    out = runs/a
    """
    cfg = RunConfig.from_text(text)
    assert cfg["alpha_k"] == 32 and cfg["k"] == 8 and cfg["lambda_temp"] == 0.2
    assert cfg["hierarchical"] is False and cfg["out"] == "runs/a"
    m = cfg.model_config()
    assert m.encoder_hidden == (64, 32) and m.k == 8
    assert cfg.explicit == {"alpha_k", "k", "lambda_temp", "hierarchical", "encoder_hidden", "out"}


@pytest.mark.parametrize("text", ["bogus = 1", "k = eight", "hierarchical = maybe", "no equals sign"])
def test_rejects_bad_input(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_update_rejects_unknown():
    with pytest.raises(ConfigError):
        RunConfig({"nope": 1})


def test_resolved_text_round_trips():
    cfg = RunConfig.from_text("lambda_temp = 0.1\nlr = 3e-4\nseed = 7\ntemporal = false\n")
    text = cfg.to_text()
    assert text.startswith("#")
    back = RunConfig.from_text(text)
    assert back.values == cfg.values
    assert back.to_text() == text
    assert back.train_config().lr == 3e-4


def test_invalid_model_values_surface_as_config_error():
    with pytest.raises(ConfigError):
        RunConfig.from_text("alpha_k = 2\nk = 4").model_config()

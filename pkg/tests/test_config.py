import pytest

from protoem.config import parse_config
from protoem.encoder import ConfigError


def test_defaults_and_overrides():
    run = parse_config("[encoder]\nfusion = bilinear\n[stage2]\nK = 100\nN = 1\n[train]\nlr = 0.01\n")
    assert run.encoder.fusion == "bilinear"
    assert (run.encoder.stages[1].K, run.encoder.stages[1].N) == (100, 1)
    assert run.encoder.stages[0].K == 20
    assert run.train.lr == 0.01 and run.train.max_steps == 500


@pytest.mark.parametrize("text", [
    "[train]\nbogus = 1\n",
    "[optimizer]\nlr = 1\n",
    "[stage3]\nK = 2\n",
    "[train]\nlr = fast\n",
    "[encoder]\nstages = 1\n",
    "[encoder]\nhead = depth\n",
    "[encoder]\nfusion = sum\n",
    "lr = 1\n",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text, task="flow")

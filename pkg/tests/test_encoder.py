import numpy as np
import pytest

from protoem import numerics as nx
from protoem.encoder import (ConfigError, Encoder, EncoderConfig, StageConfig, parameter_count,
                             patch_tokens, upsample, upsample_matrix)
from protoem.numerics import ContractError

SMALL = [StageConfig(4, 8, 1, 6, 2), StageConfig(2, 8, 1, 3, 2)]


@pytest.mark.parametrize("head,fusion", [("flow", "concat"), ("flow", "bilinear"), ("depth", "concat")])
def test_parameter_count_closed_form(head, fusion):
    cfg = EncoderConfig(head=head, fusion=fusion)
    assert Encoder(cfg).num_parameters() == parameter_count(cfg)


def test_parameter_count_ignores_k_and_n():
    a = EncoderConfig(stages=[StageConfig(4, 16, 2, 20, 3), StageConfig(2, 32, 2, 100, 1)])
    assert parameter_count(a) == parameter_count(EncoderConfig())


def test_output_shapes(rng):
    flow = Encoder(EncoderConfig(head="flow", stages=SMALL))
    out, diags = flow((rng.random((2, 16, 16, 1)), rng.random((2, 16, 16, 1))))
    assert out.shape == (2, 16, 16, 2)
    assert [(d["stage"], d["block"]) for d in diags] == [(1, 0), (2, 0)]
    assert diags[0]["assignment"].shape == (4, 6, 16)  # both frames in the batch
    depth = Encoder(EncoderConfig(head="depth", stages=SMALL))
    out, _ = depth(rng.random((16, 16, 1)))
    assert out.shape == (16, 16, 1)


def test_k_clipped_to_token_count(rng):
    enc = Encoder(EncoderConfig(head="depth"))
    _, diags = enc(rng.random((32, 32, 1)))
    assert diags[0]["assignment"].shape[-2:] == (20, 64)
    assert diags[-1]["assignment"].shape[-2:] == (16, 16)


def test_zero_head_gives_zero_prediction(rng):
    enc = Encoder(EncoderConfig(head="flow", stages=SMALL))
    enc.load_state({"head.weight": np.zeros_like(enc.head.weight.data)}, strict=False)
    out, _ = enc((rng.random((16, 16, 1)), rng.random((16, 16, 1))))
    assert np.array_equal(out.data, np.zeros((16, 16, 2)))


def test_batch_order_independent(rng):
    enc = Encoder(EncoderConfig(head="flow", stages=SMALL))
    a, b = rng.random((3, 16, 16, 1)), rng.random((3, 16, 16, 1))
    batched, _ = enc((a, b))
    for i in range(3):
        single, _ = enc((a[i], b[i]))
        assert np.array_equal(single.data, batched.data[i])
    perm = [2, 0, 1]
    shuffled, _ = enc((a[perm], b[perm]))
    assert np.array_equal(shuffled.data, batched.data[perm])


def test_same_seed_same_weights():
    a, b = Encoder(EncoderConfig(seed=5)), Encoder(EncoderConfig(seed=5))
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a.parameters(), b.parameters()))


def test_patch_tokens_layout():
    img = np.arange(16.0).reshape(4, 4, 1)
    tokens, grid = patch_tokens(nx.as_tensor(img), 2)
    assert grid == (2, 2)
    assert tokens.data[1].tolist() == [2.0, 3.0, 6.0, 7.0]


def test_upsample_rows_are_convex():
    u = upsample_matrix(32, 4)
    assert np.allclose(u.sum(1), 1.0)
    assert (u >= 0).all()
    x = np.random.default_rng(0).normal(size=(1, 4, 4, 2))
    const = np.ones((1, 4, 4, 2)) * 3.0
    assert np.allclose(upsample(nx.as_tensor(const), 32, 32).data, 3.0)
    assert upsample(nx.as_tensor(x), 8, 8).shape == (1, 8, 8, 2)


def test_config_errors(rng):
    with pytest.raises(ConfigError):
        Encoder(EncoderConfig(head="segmentation"))
    with pytest.raises(ConfigError):
        Encoder(EncoderConfig(fusion="sum"))
    with pytest.raises(ConfigError):
        Encoder(EncoderConfig(heads=3))
    enc = Encoder(EncoderConfig(head="depth", stages=SMALL))
    with pytest.raises(ConfigError):
        enc(rng.random((12, 12, 1)))
    with pytest.raises(ContractError):
        enc(rng.random((16, 16, 2)))
    flow = Encoder(EncoderConfig(head="flow", stages=SMALL))
    with pytest.raises(ContractError):
        flow((rng.random((16, 16, 1)), rng.random((8, 8, 1))))

import numpy as np
import pytest

from awnet.autograd import Tensor
from awnet.autograd import functional as F
from awnet.network import AWNet, ModelConfig, average_predictions, build_model, forward_demosaiced, forward_raw

SMALL = dict(base_channels=4, growth_rate=2)


def model(branch, dtype=np.float32, **kw):
    return build_model(ModelConfig(branch=branch, **{**SMALL, **kw}), dtype)


def rand(*shape, seed=0, dtype=np.float32):
    return Tensor(np.random.default_rng(seed).uniform(0, 1, shape).astype(dtype))


def test_config_scale_count_follows_branch():
    assert ModelConfig(branch="raw").num_scales == 6
    assert ModelConfig(branch="demosaiced").num_scales == 5
    with pytest.raises(ValueError):
        ModelConfig(branch="raw", num_scales=5)
    with pytest.raises(ValueError):
        ModelConfig(branch="rgb")
    with pytest.raises(ValueError):
        ModelConfig(base_channels=2)


def test_config_dict_round_trip():
    cfg = ModelConfig(branch="demosaiced", base_channels=8, pyramid_bins=(1, 3), seed=4)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_raw_toy_ladder():
    outs = forward_raw(model("raw"), rand(1, 4, 32, 32))
    assert outs.extents() == [2, 4, 8, 16, 32, 64]
    assert all(o.shape[:2] == (1, 3) and o.shape[2] == o.shape[3] for o in outs)


def test_demosaiced_toy_ladder():
    outs = forward_demosaiced(model("demosaiced"), rand(1, 3, 64, 64))
    assert outs.extents() == [4, 8, 16, 32, 64]
    assert all(o.shape[1] == 3 for o in outs)


def test_rectangular_input_and_batch():
    outs = model("demosaiced")(rand(2, 3, 32, 48))
    assert outs.final.shape == (2, 3, 32, 48)


def test_divisibility_and_channel_errors():
    with pytest.raises(ValueError, match="divisible"):
        model("raw")(rand(1, 4, 24, 32))
    with pytest.raises(ValueError, match="expects"):
        model("raw")(rand(1, 3, 32, 32))
    with pytest.raises(ValueError):
        forward_raw(model("demosaiced"), rand(1, 3, 32, 32))
    with pytest.raises(ValueError):
        forward_demosaiced(model("raw"), rand(1, 4, 32, 32))


def test_seeded_initialization():
    a, b = model("raw", seed=3).state_dict(), model("raw", seed=3).state_dict()
    c = model("raw", seed=4).state_dict()
    assert a.keys() == b.keys()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert any(a[k].tobytes() != c[k].tobytes() for k in a)


def test_parameter_names_unique_and_heads_distinct():
    m = model("raw")
    names = [n for n, _ in m.named_parameters()]
    assert len(names) == len(set(names))
    assert len(m.heads) == 6
    assert len({id(h.weight) for h in m.heads}) == 6


def test_parameter_count_independent_of_input_size():
    m = model("demosaiced")
    before = m.num_parameters()
    m(rand(1, 3, 32, 32))
    m(rand(1, 3, 64, 96))
    assert m.num_parameters() == before


@pytest.mark.parametrize("branch,shape", [("raw", (1, 4, 32, 32)), ("demosaiced", (1, 3, 32, 32))])
def test_every_parameter_receives_gradient(branch, shape):
    m = model(branch, dtype=np.float64)
    outs = m(rand(*shape, dtype=np.float64))
    proj = np.random.default_rng(1)
    loss = None
    for o in outs:
        term = F.sum(F.mul(o, Tensor(proj.standard_normal(o.shape))))
        loss = term if loss is None else F.add(loss, term)
    loss.backward()
    dead = [n for n, p in m.named_parameters() if p.grad is None or not np.any(p.grad)]
    assert dead == []


def test_bias_only_model_has_spatially_constant_outputs():
    m = model("raw", dtype=np.float64)
    for name, p in m.named_parameters():
        if not name.endswith("bias"):
            p.data[...] = 0
    for o in m(rand(1, 4, 32, 32, dtype=np.float64)):
        spread = o.data.max(axis=(2, 3)) - o.data.min(axis=(2, 3))
        assert np.all(spread == 0)


def test_predict_clamps_final_scale():
    m = model("demosaiced")
    for h in m.heads:
        h.bias.data[...] = 5.0
    y = m.predict(rand(1, 3, 32, 32))
    assert y.shape == (1, 3, 32, 32)
    assert y.data.min() >= 0 and y.data.max() <= 1


def test_average_predictions():
    a = rand(1, 3, 4, 4)
    np.testing.assert_array_equal(average_predictions(a, a).data, a.data)
    half = average_predictions(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.ones((1, 3, 2, 2))))
    np.testing.assert_array_equal(half.data, 0.5)
    with pytest.raises(ValueError):
        average_predictions(a, rand(1, 3, 4, 8))


def test_raw_final_matches_demosaiced_final_extent():
    raw = model("raw")(rand(1, 4, 16, 16)).final
    dem = model("demosaiced")(rand(1, 3, 32, 32)).final
    assert raw.shape == dem.shape


def test_awnet_is_a_module_with_dtype():
    m = AWNet(ModelConfig(**SMALL), np.float64)
    assert m.dtype == np.float64

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from awnet.data import PACK_RELABEL, pack_planes, synthesize_pair, synthetic_rgb
from awnet.inference import (
    RAW_PLANE_ORDER,
    VARIANTS,
    EvalReport,
    evaluate,
    fuse_models,
    image_metrics,
    inverse_transform,
    predict_pair,
    self_ensemble,
    single_pass,
    transform,
    transform_raw,
    tree_mean,
)
from awnet.losses import psnr
from awnet.network import AWNet, ModelConfig


def test_variants_are_the_eight_d4_elements():
    assert len(VARIANTS) == 8 and len(set(VARIANTS)) == 8
    x = np.arange(16.0).reshape(1, 4, 4)
    images = {transform(x, k, f).tobytes() for k, f in VARIANTS}
    assert len(images) == 8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.integers(1, 5))
def test_transforms_invert_bit_exactly(seed, h, w):
    x = np.random.default_rng(seed).random((2, 3, h, w)).astype(np.float32)
    for k, f in VARIANTS:
        np.testing.assert_array_equal(inverse_transform(transform(x, k, f), k, f), x)


def test_transforms_close_under_composition():
    x = np.random.default_rng(0).random((1, 5, 5))
    results = {transform(x, k, f).tobytes() for k, f in VARIANTS}
    for k1, f1 in VARIANTS:
        for k2, f2 in VARIANTS:
            assert transform(transform(x, k1, f1), k2, f2).tobytes() in results


def test_raw_plane_order_matches_packing():
    # a transpose has no sub-pixel shift, so packing commutes with it exactly up to the G1/G2 swap
    m = np.random.default_rng(1).random((8, 8))
    assert RAW_PLANE_ORDER(1) == PACK_RELABEL["transpose"]
    lhs = pack_planes(m.T)[None]
    rhs = np.swapaxes(pack_planes(m)[None][:, list(RAW_PLANE_ORDER(1))], -1, -2)
    np.testing.assert_array_equal(lhs, rhs)
    assert RAW_PLANE_ORDER(0) == RAW_PLANE_ORDER(2) == (0, 1, 2, 3)


def test_tree_mean_fixed_order():
    arrays = [np.float32(v) for v in (0.1, 0.2, 0.3, 0.4, 0.5)]
    expected = (((arrays[0] + arrays[1]) + (arrays[2] + arrays[3])) + arrays[4]) / np.float32(5)
    assert tree_mean(arrays) == expected
    same = [np.full(3, 0.7, np.float32)] * 8
    np.testing.assert_array_equal(tree_mean(same), same[0])


# -- self-ensemble --------------------------------------------------------------


def equivariant_model(x):
    """Pointwise map: commutes with every dihedral transform."""
    return np.tanh(x[:, :3] * 1.7) + 0.1


def test_equivariant_model_ensemble_equals_single_pass():
    x = np.random.default_rng(2).random((1, 3, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(self_ensemble(equivariant_model, x, bayer=False), equivariant_model(x))


def test_ensemble_of_rotated_input_is_rotated_output():
    model = AWNet(ModelConfig(branch="demosaiced", base_channels=4, growth_rate=2))
    x = np.random.default_rng(3).random((1, 3, 32, 32)).astype(np.float32)
    a = self_ensemble(model, x)
    b = self_ensemble(model, np.rot90(x, 1, axes=(-2, -1)).copy())
    np.testing.assert_allclose(b, np.rot90(a, 1, axes=(-2, -1)), atol=1e-6)
    assert a.shape == single_pass(model, x).shape


def test_raw_ensemble_shape_and_idempotence():
    model = AWNet(ModelConfig(branch="raw", base_channels=4, growth_rate=2))
    x = np.random.default_rng(4).random((1, 4, 16, 16)).astype(np.float32)
    out = self_ensemble(model, x)
    assert out.shape == (1, 3, 32, 32)
    np.testing.assert_array_equal(out, self_ensemble(model, x))


def test_transform_raw_swaps_greens_on_odd_turns():
    x = np.stack([np.full((2, 2), v) for v in (0.0, 1.0, 2.0, 3.0)])[None]
    assert transform_raw(x, 1, False)[0, :, 0, 0].tolist() == [0.0, 3.0, 2.0, 1.0]
    assert transform_raw(x, 2, True)[0, :, 0, 0].tolist() == [0.0, 1.0, 2.0, 3.0]


# -- fusion and evaluation ------------------------------------------------------


@pytest.fixture(scope="module")
def dataset():
    rng = np.random.default_rng(5)
    return [synthesize_pair(synthetic_rgb(32, 32, rng), seed=i, id=f"{i:02d}") for i in range(3)]


class Oracle:
    """Stand-in model returning a fixed image regardless of input."""

    def __init__(self, image):
        self.image = image

    def __call__(self, x):
        return self.image[None].astype(np.float32)


def test_fusion_of_identical_outputs_passes_through(dataset):
    pair = dataset[0]
    model = Oracle(pair.target3)
    np.testing.assert_array_equal(fuse_models(model, model, pair), np.clip(pair.target3, 0, 1))


def test_fusion_with_a_perfect_branch_helps(dataset):
    pair = dataset[0]
    good, bad = Oracle(pair.target3), Oracle(pair.demosaiced3)
    fused = fuse_models(good, bad, pair)
    assert psnr(fused, pair.target3) > psnr(np.clip(pair.demosaiced3, 0, 1), pair.target3)


def test_fusion_shape_mismatch(dataset):
    pair = dataset[0]
    with pytest.raises(ValueError, match="shape"):
        fuse_models(Oracle(pair.target3), Oracle(pair.target3[:, :16]), pair)


def test_predict_pair_clamps(dataset):
    out = predict_pair(Oracle(dataset[0].target3 * 3 - 1), dataset[0])
    assert out.min() >= 0.0 and out.max() <= 1.0


class TargetLookup:
    """Returns the target of whichever pair's demosaiced image it is given."""

    def __init__(self, pairs):
        self.by_input = {p.demosaiced3.tobytes(): p.target3 for p in pairs}

    def __call__(self, x):
        return self.by_input[x[0].astype(np.float32).tobytes()][None]


def test_perfect_predictor_metrics(dataset):
    report = evaluate(TargetLookup(dataset), dataset)
    assert all(math.isinf(p) and s == pytest.approx(1.0, abs=1e-12) for _, p, s in report.rows)


def test_evaluate_mean_order_and_agreement(dataset):
    model = Oracle(dataset[0].demosaiced3)
    report = evaluate(model, dataset)
    shuffled = evaluate(model, dataset[::-1])
    assert report.rows == shuffled.rows
    assert [r[0] for r in report.rows] == ["00", "01", "02"]
    assert report.mean_psnr == pytest.approx(sum(r[1] for r in report.rows) / 3, abs=1e-12)
    for (rid, p, s), pair in zip(report.rows, dataset):
        ep, es = image_metrics(np.clip(dataset[0].demosaiced3, 0, 1), pair.target3)
        assert abs(p - ep) <= 1e-9 and abs(s - es) <= 1e-9


def test_evaluate_empty_dataset():
    with pytest.raises(ValueError, match="empty"):
        evaluate(Oracle(np.zeros((3, 4, 4))), [])


def test_report_csv_roundtrip(tmp_path):
    report = EvalReport([("a", 20.5, 0.75), ("b", math.inf, 1.0)], provenance="x")
    text = report.to_csv()
    assert text.splitlines()[0] == "id,psnr_db,ssim"
    assert text.splitlines()[2] == "b,inf,1.0"
    assert text.splitlines()[-1].startswith("mean,inf,")
    report.write(tmp_path / "r.csv")
    assert EvalReport.read(tmp_path / "r.csv").rows == report.rows

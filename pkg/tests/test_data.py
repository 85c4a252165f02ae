import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from awnet.data import (
    AUGMENTATIONS,
    PACK_RELABEL,
    BayerImage,
    Degradation,
    SamplePair,
    augment,
    demosaic_bilinear,
    flip_array,
    load_dataset,
    mosaic_rgb,
    pack_planes,
    quantize,
    read_png,
    read_praw,
    synthesize_pair,
    synthetic_rgb,
    unpack_planes,
    write_pair,
    write_png,
    write_praw,
)

# -- Bayer packing --------------------------------------------------------------


def test_pack_two_by_two():
    planes = pack_planes(np.array([[1, 2], [3, 4]]))
    assert planes[:, 0, 0].tolist() == [1, 2, 4, 3]  # R, G1, B, G2


def test_pack_checker_four_by_four():
    m = np.arange(16).reshape(4, 4)
    planes = pack_planes(m)
    np.testing.assert_array_equal(planes[0], [[0, 2], [8, 10]])
    np.testing.assert_array_equal(planes[2], [[5, 7], [13, 15]])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_pack_unpack_roundtrip(h, w, seed):
    m = np.random.default_rng(seed).integers(0, 65536, (2 * h, 2 * w))
    np.testing.assert_array_equal(unpack_planes(pack_planes(m)), m)


def test_pack_odd_extent_rejected():
    with pytest.raises(ValueError, match="even"):
        pack_planes(np.zeros((3, 4)))


@pytest.mark.parametrize("op", sorted(PACK_RELABEL))
def test_pack_relabel_table(op):
    m = np.random.default_rng(0).random((8, 6 if op != "transpose" else 8))
    geometric = {"hflip": lambda a: a[..., ::-1], "vflip": lambda a: a[..., ::-1, :],
                 "transpose": lambda a: np.swapaxes(a, -1, -2)}[op]
    lhs = pack_planes(geometric(m))
    rhs = geometric(pack_planes(m))[list(PACK_RELABEL[op])]
    np.testing.assert_array_equal(lhs, rhs)


def test_bayer_image_validation():
    with pytest.raises(ValueError, match="bit depth"):
        BayerImage(np.zeros((2, 2), np.uint16), 12)
    with pytest.raises(ValueError, match="even"):
        BayerImage(np.zeros((3, 2), np.uint16))
    with pytest.raises(ValueError, match="outside"):
        BayerImage(np.full((2, 2), 300), 8)


# -- demosaic -------------------------------------------------------------------


def test_demosaic_constant_mosaic():
    out = demosaic_bilinear(np.full((8, 8), 0.3))
    np.testing.assert_allclose(out, 0.3, atol=1e-7)


def test_demosaic_keeps_sampled_sites():
    rgb = np.random.default_rng(1).random((3, 10, 12))
    out = demosaic_bilinear(mosaic_rgb(rgb))
    np.testing.assert_allclose(out[0, 0::2, 0::2], rgb[0, 0::2, 0::2], atol=1e-7)
    np.testing.assert_allclose(out[1, 0::2, 1::2], rgb[1, 0::2, 1::2], atol=1e-7)
    np.testing.assert_allclose(out[1, 1::2, 0::2], rgb[1, 1::2, 0::2], atol=1e-7)
    np.testing.assert_allclose(out[2, 1::2, 1::2], rgb[2, 1::2, 1::2], atol=1e-7)


def test_demosaic_reproduces_interior_linear_ramp():
    yy, xx = np.mgrid[0:12, 0:12] / 16.0
    ramp = 0.1 + 0.5 * xx + 0.3 * yy
    out = demosaic_bilinear(mosaic_rgb(np.stack([ramp] * 3)))
    np.testing.assert_allclose(out[:, 2:-2, 2:-2], np.stack([ramp] * 3)[:, 2:-2, 2:-2], atol=1e-6)


# -- synthetic pairs ------------------------------------------------------------


def test_identity_degradation_has_exact_samples():
    rgb = synthetic_rgb(16, 16, np.random.default_rng(2))
    pair = synthesize_pair(rgb, seed=0, degradation=Degradation.identity())
    np.testing.assert_allclose(unpack_planes(pair.raw4), mosaic_rgb(rgb), atol=1e-7)
    np.testing.assert_allclose(pair.target3, rgb, atol=1e-7)


def test_synthesis_is_pure_in_seed():
    rgb = synthetic_rgb(16, 16, np.random.default_rng(3))
    a, b = synthesize_pair(rgb, 5), synthesize_pair(rgb, 5)
    np.testing.assert_array_equal(a.raw4, b.raw4)
    np.testing.assert_array_equal(a.demosaiced3, b.demosaiced3)
    assert not np.array_equal(a.raw4, synthesize_pair(rgb, 6).raw4)


def test_noise_level_matches_sigma():
    rgb = np.full((3, 256, 256), 0.5)
    deg = Degradation(1.0, np.eye(3), 0.05)
    pair = synthesize_pair(rgb, seed=0, degradation=deg)
    std = float(np.std(pair.raw4.astype(np.float64) - 0.5))
    assert abs(std - 0.05) <= 0.005


def test_non_invertible_colour_matrix_rejected():
    rgb = np.full((3, 4, 4), 0.5)
    with pytest.raises(ValueError, match="invertible"):
        synthesize_pair(rgb, 0, Degradation(2.2, np.ones((3, 3)), 0.0))


def test_pair_shape_contract_and_readonly():
    with pytest.raises(ValueError, match="half"):
        SamplePair(np.zeros((4, 3, 3)), np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))
    pair = SamplePair(np.zeros((4, 4, 4)), np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))
    assert pair.raw4.dtype == np.float32
    with pytest.raises(ValueError):
        pair.raw4[0, 0, 0] = 1.0


# -- augmentation ---------------------------------------------------------------


@pytest.fixture
def pair():
    return synthesize_pair(synthetic_rgb(16, 16, np.random.default_rng(4)), seed=1, id="p")


def test_augment_none_is_identity(pair):
    assert augment(pair, "none") is pair


@pytest.mark.parametrize("op", AUGMENTATIONS)
def test_augment_is_an_involution(pair, op):
    twice = augment(augment(pair, op), op)
    for name in ("raw4", "demosaiced3", "target3"):
        np.testing.assert_array_equal(getattr(twice, name), getattr(pair, name))


def test_hflip_index_oracle(pair):
    out = augment(pair, "hflip")
    w = pair.target3.shape[2]
    for c, y, x in [(0, 0, 0), (1, 5, 3), (2, 15, 15)]:
        assert out.target3[c, y, x] == pair.target3[c, y, w - 1 - x]
    # planes keep their colour: the red plane is still the red plane
    np.testing.assert_array_equal(out.raw4[0], pair.raw4[0][:, ::-1])


def test_unknown_augmentation():
    with pytest.raises(ValueError, match="unknown"):
        flip_array(np.zeros((2, 2)), "rot45")


# -- file formats ---------------------------------------------------------------


@pytest.mark.parametrize("depth", [8, 16])
def test_praw_roundtrip_is_byte_identical(tmp_path, depth):
    m = np.random.default_rng(5).integers(0, 1 << depth, (6, 8))
    img = BayerImage(m.astype(np.uint16 if depth == 16 else np.uint8), depth)
    write_praw(tmp_path / "a.praw", img)
    back = read_praw(tmp_path / "a.praw")
    np.testing.assert_array_equal(back.mosaic, img.mosaic)
    write_praw(tmp_path / "b.praw", back)
    assert (tmp_path / "a.praw").read_bytes() == (tmp_path / "b.praw").read_bytes()


def test_praw_bad_magic_and_truncation(tmp_path):
    write_praw(tmp_path / "a.praw", BayerImage(np.zeros((2, 2), np.uint16)))
    blob = (tmp_path / "a.praw").read_bytes()
    (tmp_path / "bad.praw").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError, match="magic"):
        read_praw(tmp_path / "bad.praw")
    (tmp_path / "short.praw").write_bytes(blob[:-1])
    with pytest.raises(ValueError, match="expected"):
        read_praw(tmp_path / "short.praw")


def test_quantize_rounds_half_up():
    assert quantize(np.array([0.5 / 255, 1.5 / 255]), 8).tolist() == [1, 2]
    assert quantize(np.array([-0.2, 1.7]), 8).tolist() == [0, 255]


@pytest.mark.parametrize("depth", [8, 16])
def test_png_roundtrip(tmp_path, depth):
    img = np.random.default_rng(6).random((3, 5, 7))
    write_png(tmp_path / "x.png", img, depth)
    back, got = read_png(tmp_path / "x.png")
    assert got == depth
    top = (1 << depth) - 1
    np.testing.assert_allclose(back, quantize(img, depth) / top, atol=1e-7)


# -- dataset directories --------------------------------------------------------


def _write(root, ids, depth=16, split="train"):
    rng = np.random.default_rng(7)
    for i in ids:
        write_pair(root, split, synthesize_pair(synthetic_rgb(8, 8, rng), 0, id=i), depth)


def test_empty_split_yields_nothing(tmp_path):
    assert list(load_dataset(tmp_path, "train")) == []


def test_dataset_sorted_ids(tmp_path):
    _write(tmp_path, ["c", "a", "b"])
    pairs = list(load_dataset(tmp_path))
    assert [p.id for p in pairs] == ["a", "b", "c"]
    assert pairs[0].raw4.shape == (4, 4, 4)


def test_dataset_orphan_names_id(tmp_path):
    _write(tmp_path, ["a", "b"])
    (tmp_path / "train" / "target" / "b.png").unlink()
    with pytest.raises(FileNotFoundError, match="b .missing target"):
        load_dataset(tmp_path)


def test_dataset_bit_depth_mix(tmp_path):
    _write(tmp_path, ["a"], 16)
    _write(tmp_path, ["b"], 8)
    with pytest.raises(ValueError, match="bit-depth"):
        load_dataset(tmp_path)


def test_dataset_bad_split(tmp_path):
    with pytest.raises(ValueError, match="split"):
        load_dataset(tmp_path, "test")

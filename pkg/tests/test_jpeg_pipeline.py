import math

import numpy as np
import pytest

from jpeg_dl.jpeg_pipeline import (
    INVERSE_ZIGZAG,
    ZIGZAG,
    DctCoefficients,
    SubsamplingMode,
    forward_dct,
    inverse_dct,
    pipeline_backward,
    pipeline_forward,
    pipeline_inverse,
    pipeline_inverse_backward,
    rgb_to_ycbcr,
    subsample,
    upsample,
    ycbcr_to_rgb,
)

MODES = list(SubsamplingMode)


def naive_dct_block(block):
    """Textbook double-sum orthonormal DCT-II of one 8x8 block."""
    out = np.zeros((8, 8))
    for u in range(8):
        for v in range(8):
            cu = math.sqrt(1 / 8) if u == 0 else math.sqrt(2 / 8)
            cv = math.sqrt(1 / 8) if v == 0 else math.sqrt(2 / 8)
            acc = 0.0
            for x in range(8):
                for y in range(8):
                    acc += (
                        block[x, y]
                        * math.cos((2 * x + 1) * u * math.pi / 16)
                        * math.cos((2 * y + 1) * v * math.pi / 16)
                    )
            out[u, v] = cu * cv * acc
    return out


def zigzag_by_walk():
    """Standard JPEG scan generated by walking anti-diagonals."""
    order = []
    for s in range(15):
        cells = [(i, s - i) for i in range(8) if 0 <= s - i < 8]
        order.extend(cells if s % 2 else cells[::-1])
    return np.array([8 * i + j for i, j in order])


# colour ---------------------------------------------------------------


def _pixel(rgb):
    return np.array(rgb, dtype=np.float64).reshape(3, 1, 1)


@pytest.mark.parametrize(
    "rgb,expected",
    [
        ((0, 0, 0), (0, 128, 128)),
        ((255, 255, 255), (255, 128, 128)),
        ((255, 0, 0), (76.245, 84.972, 255.5)),
    ],
)
def test_rgb_to_ycbcr_examples(rgb, expected):
    np.testing.assert_allclose(rgb_to_ycbcr(_pixel(rgb)).ravel(), expected, atol=1e-3)


def test_rgb_to_ycbcr_matches_linear_forms():
    r, g, b = 12.0, 200.0, 77.0
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128
    np.testing.assert_allclose(rgb_to_ycbcr(_pixel((r, g, b))).ravel(), [y, cb, cr], atol=1e-12)


def test_ycbcr_to_rgb_examples_and_round_trip():
    np.testing.assert_allclose(ycbcr_to_rgb(_pixel((0, 128, 128))).ravel(), 0.0, atol=1e-9)
    np.testing.assert_allclose(ycbcr_to_rgb(_pixel((255, 128, 128))).ravel(), 255.0, atol=1e-9)
    x = np.random.default_rng(0).uniform(0, 255, (4, 3, 16, 16))
    assert np.abs(ycbcr_to_rgb(rgb_to_ycbcr(x)) - x).max() < 1e-4


def test_colour_requires_three_channels():
    with pytest.raises(ValueError):
        rgb_to_ycbcr(np.zeros((2, 8, 8)))
    with pytest.raises(ValueError):
        ycbcr_to_rgb(np.zeros((4, 8, 8)))


# subsampling ----------------------------------------------------------


def test_subsample_shapes_and_identity():
    x = np.random.default_rng(1).uniform(0, 255, (3, 16, 16))
    planes = subsample(x, "444")
    for c in range(3):
        np.testing.assert_array_equal(planes[c], x[c])
    assert [p.shape for p in subsample(x, "422")] == [(16, 16), (16, 8), (16, 8)]
    assert [p.shape for p in subsample(x, "420")] == [(16, 16), (8, 8), (8, 8)]
    np.testing.assert_array_equal(upsample(planes, "444"), x)


def test_subsample_constant_chroma():
    x = np.stack([np.arange(256.0).reshape(16, 16), np.full((16, 16), 90.0), np.full((16, 16), 30.0)])
    planes = subsample(x, SubsamplingMode.S420)
    np.testing.assert_array_equal(planes[1], np.full((8, 8), 90.0))
    np.testing.assert_array_equal(planes[0], x[0])
    np.testing.assert_array_equal(upsample(planes, SubsamplingMode.S420), x)


def test_subsample_indivisible():
    with pytest.raises(ValueError):
        subsample(np.zeros((3, 8, 9)), "422")


# DCT ------------------------------------------------------------------


def test_zigzag_is_the_standard_permutation():
    np.testing.assert_array_equal(ZIGZAG, zigzag_by_walk())
    assert sorted(ZIGZAG.tolist()) == list(range(64))
    np.testing.assert_array_equal(ZIGZAG[INVERSE_ZIGZAG], np.arange(64))
    np.testing.assert_array_equal(ZIGZAG[:6], [0, 1, 8, 16, 9, 2])


def test_constant_blocks():
    z = forward_dct(np.full((1, 8, 8), 128.0))
    np.testing.assert_allclose(z[0], 0.0, atol=1e-12)
    z = forward_dct(np.full((1, 8, 8), 136.0))
    assert z[0][0, 0] == pytest.approx(64.0, abs=1e-12)
    np.testing.assert_allclose(z[0][1:], 0.0, atol=1e-12)


def test_forward_dct_matches_naive_oracle():
    block = np.random.default_rng(2).uniform(0, 255, (8, 8))
    ours = forward_dct(block[None])[0][:, 0]
    oracle = naive_dct_block(block - 128.0).ravel()[ZIGZAG]
    np.testing.assert_allclose(ours, oracle, atol=1e-8)


def test_block_order_is_raster():
    x = np.full((1, 16, 24), 128.0)
    x[0, 8:16, 0:8] = 136.0  # block row 1, col 0 -> raster index 3
    z = forward_dct(x)
    assert z.grids == ((2, 3),)
    np.testing.assert_allclose(z[0][0], [0, 0, 0, 64, 0, 0], atol=1e-12)


def test_parseval_per_block():
    x = np.random.default_rng(3).uniform(0, 255, (3, 16, 16))
    z = forward_dct(x)
    for c in range(3):
        blocks = (x[c] - 128).reshape(2, 8, 2, 8).swapaxes(1, 2).reshape(4, 64)
        np.testing.assert_allclose((z[c] ** 2).sum(axis=0), (blocks**2).sum(axis=1), rtol=1e-12, atol=1e-8)


def test_inverse_dct_examples():
    zero = DctCoefficients((np.zeros((64, 1)),), ((1, 1),))
    np.testing.assert_array_equal(inverse_dct(zero), np.full((1, 8, 8), 128.0))
    dc = np.zeros((64, 1))
    dc[0, 0] = 64.0
    np.testing.assert_allclose(inverse_dct(DctCoefficients((dc,), ((1, 1),))), 136.0, atol=1e-12)
    x = np.random.default_rng(4).uniform(0, 255, (2, 3, 16, 24))
    assert np.abs(inverse_dct(forward_dct(x)) - x).max() < 1e-6


def test_forward_dct_misaligned():
    with pytest.raises(ValueError):
        forward_dct(np.zeros((3, 8, 12)))


# composite ------------------------------------------------------------


@pytest.mark.parametrize("mode", MODES)
def test_pipeline_adjoint(mode):
    rng = np.random.default_rng(5)
    u = rng.normal(size=(2, 3, 16, 16))
    z, ctx = pipeline_forward(u, mode)
    # the forward map is affine; its linear part is forward(u) - forward(0)
    z0, _ = pipeline_forward(np.zeros_like(u), mode)
    v = z.map(lambda l, c: rng.normal(size=c.shape))
    lhs = sum(np.sum((a - b) * c) for a, b, c in zip(z, z0, v))
    rhs = np.sum(u * pipeline_backward(v, ctx))
    assert abs(lhs - rhs) < 1e-8 * max(1.0, abs(lhs))

    w = rng.normal(size=u.shape)
    x1 = pipeline_inverse(v, mode)
    x0 = pipeline_inverse(v.map(lambda l, c: np.zeros_like(c)), mode)
    lhs = np.sum((x1 - x0) * w)
    rhs = sum(np.sum(a * b) for a, b in zip(v, pipeline_inverse_backward(w, ctx)))
    assert abs(lhs - rhs) < 1e-8 * max(1.0, abs(lhs))


def test_pipeline_round_trip_444():
    x = np.random.default_rng(6).uniform(0, 255, (3, 16, 16))
    z, _ = pipeline_forward(x)
    assert np.abs(pipeline_inverse(z) - x).max() < 1e-3


def test_pipeline_backward_zero_and_finite_difference():
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 255, (3, 8, 8))
    z, ctx = pipeline_forward(x)
    zero = z.map(lambda l, c: np.zeros_like(c))
    np.testing.assert_array_equal(pipeline_backward(zero, ctx), 0.0)

    weights = z.map(lambda l, c: rng.normal(size=c.shape))

    def objective(img):
        out, _ = pipeline_forward(img)
        return sum(np.sum(a * w) for a, w in zip(out, weights))

    analytic = pipeline_backward(weights, ctx)
    h = 1e-3
    numeric = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        step = np.zeros_like(x)
        step[idx] = h
        numeric[idx] = (objective(x + step) - objective(x - step)) / (2 * h)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
    assert rel.max() < 1e-5


def test_dc_gradient_is_constant_luma_weight():
    x = np.random.default_rng(8).uniform(0, 255, (3, 8, 8))
    z, ctx = pipeline_forward(x)
    seed = z.map(lambda l, c: np.zeros_like(c))
    seed[0][0, 0] = 1.0
    grad = pipeline_backward(seed, ctx)
    for c, weight in enumerate((0.299, 0.587, 0.114)):
        np.testing.assert_allclose(grad[c], weight / 8.0, atol=1e-14)


def test_pipeline_backward_grid_mismatch():
    _, ctx = pipeline_forward(np.zeros((3, 16, 16)))
    z, _ = pipeline_forward(np.zeros((3, 8, 8)))
    with pytest.raises(ValueError):
        pipeline_backward(z, ctx)

import math

import numpy as np
import pytest

from jpeg_dl.classifier import init_classifier
from jpeg_dl.qtable import (
    Q_MIN,
    QuantTables,
    TableFormatError,
    apply_gradient_scaling,
    dumps_tables,
    init_magnitude,
    init_ones,
    init_sensitivity,
    levels_for_bits,
    load_tables,
    loads_tables,
    save_tables,
)
from jpeg_dl.tensor_data import LabeledDataset, make_synthetic_frequency_dataset


def _random_tables(seed=0, hbar=None):
    rng = np.random.default_rng(seed)
    return QuantTables(*(rng.uniform(0.01, 50, 64) for _ in range(4)), b=8, hbar=hbar)


def test_levels_for_bits():
    assert levels_for_bits(8) == 128
    assert levels_for_bits(11) == 1024
    assert QuantTables(np.ones(64), np.ones(64), np.ones(64), np.ones(64), b=3).L == 4


def test_table_validation():
    ones = np.ones(64)
    with pytest.raises(ValueError):
        QuantTables(np.full(64, Q_MIN / 2), ones, ones, ones)
    with pytest.raises(ValueError):
        QuantTables(ones, ones, np.zeros(64), ones)
    with pytest.raises(ValueError):
        QuantTables(np.ones(63), ones, ones, ones)


def test_init_ones():
    t = init_ones()
    assert t.q_y[0] == 1.0
    np.testing.assert_array_equal(np.concatenate([t.q_y, t.q_c]), np.ones(128))
    np.testing.assert_array_equal(t.alpha_y, 5.0)
    assert loads_tables(dumps_tables(t)).equals(t)


def test_magnitude_constant_images_clamp_to_floor():
    ds = LabeledDataset(np.full((3, 3, 8, 8), 128.0), np.array([0, 1, 0]), 2)
    t = init_magnitude(ds)
    np.testing.assert_array_equal(t.q_y, Q_MIN)
    np.testing.assert_array_equal(t.q_c, Q_MIN)


def test_magnitude_single_block_formula():
    # grey image plus a pure luma DC offset of c/8 per pixel -> |z_DC| = c
    c = 40.0
    x = np.full((1, 3, 8, 8), 128.0 + c / 8.0)
    ds = LabeledDataset(x, np.array([0]), 1)
    t = init_magnitude(ds, b=11)
    assert t.q_y[0] == pytest.approx(c / 16.0, rel=1e-12)
    assert t.q_y[1] == Q_MIN


def test_magnitude_chroma_sums_both_channels():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 255, (2, 3, 16, 16))
    ds = LabeledDataset(x, np.array([0, 1]), 2)
    from jpeg_dl.jpeg_pipeline import forward_dct, rgb_to_ycbcr

    z = forward_dct(rgb_to_ycbcr(x))
    expected = (np.abs(z[1]).sum(axis=(0, 2)) + np.abs(z[2]).sum(axis=(0, 2))) / (2 * 4) / math.sqrt(128)
    np.testing.assert_allclose(init_magnitude(ds).q_c, np.maximum(expected, Q_MIN), rtol=1e-12)
    alt = init_magnitude(ds, alt_denominator=True)
    np.testing.assert_allclose(alt.q_c, np.maximum(expected * math.sqrt(128) / math.sqrt(255), Q_MIN), rtol=1e-12)


def test_magnitude_homogeneous_and_order_invariant():
    ds = make_synthetic_frequency_dataset(4, 16, seed=0)
    base = init_magnitude(ds)
    doubled = LabeledDataset(128.0 + 2.0 * (ds.images - 128.0), ds.labels, 2)
    live = base.q_y > Q_MIN
    np.testing.assert_allclose(init_magnitude(doubled).q_y[live], 2 * base.q_y[live], rtol=1e-12)
    perm = np.random.default_rng(1).permutation(len(ds))
    shuffled = LabeledDataset(ds.images[perm], ds.labels[perm], 2)
    np.testing.assert_allclose(init_magnitude(shuffled).q_y, base.q_y, rtol=1e-13)


def test_sensitivity_zero_gradient_falls_back():
    ds = make_synthetic_frequency_dataset(4, 16, seed=0)
    params = init_classifier("linear", ds.image_shape, 2)
    params.weights["W"][:] = 0.0
    t = init_sensitivity(params, ds)
    base = init_magnitude(ds)
    np.testing.assert_array_equal(t.q_y, base.q_y)
    np.testing.assert_array_equal(t.q_c, base.q_c)


def test_sensitivity_invariant_to_loss_scale():
    # scaling every weight multiplies logit gaps; use a near-linear regime where
    # dL/dz scales with the weights, so the anchored table is unchanged
    ds = make_synthetic_frequency_dataset(4, 16, seed=0)
    params = init_classifier("linear", ds.image_shape, 2, scale=1e-9, seed=3)
    scaled = params.copy()
    scaled.weights["W"] *= 10.0
    a, b = init_sensitivity(params, ds), init_sensitivity(scaled, ds)
    np.testing.assert_allclose(a.q_y, b.q_y, rtol=1e-6)
    np.testing.assert_allclose(a.q_c, b.q_c, rtol=1e-6)


def test_sensitivity_more_sensitive_frequency_gets_smaller_step():
    ds = make_synthetic_frequency_dataset(4, 8, seed=0)
    params = init_classifier("linear", ds.image_shape, 2)
    from jpeg_dl.jpeg_pipeline import DCT, ZIGZAG

    # the weights read luma through two DCT basis images with unequal gain
    basis = lambda slot: np.outer(DCT[ZIGZAG[slot] // 8], DCT[ZIGZAG[slot] % 8])
    pattern = 3.0 * basis(1) + 1.0 * basis(2)
    w = np.zeros((3, 8, 8))
    w[0] = pattern
    params.weights["W"][:] = 0.0
    params.weights["W"][:, 0] = w.ravel() * 1e-3
    t = init_sensitivity(params, ds)
    assert t.q_y[1] < t.q_y[2]


def test_sensitivity_requires_model():
    ds = make_synthetic_frequency_dataset(2, 8, seed=0)
    with pytest.raises(ValueError):
        init_sensitivity(None, ds)


def test_gradient_scaling_examples():
    t = init_ones()
    scaled = apply_gradient_scaling(t, 0.7)
    np.testing.assert_allclose(scaled.alpha_y, 0.7)
    two = QuantTables(np.full(64, 2.0), np.full(64, 2.0), np.ones(64), np.ones(64), hbar=2.0)
    two = apply_gradient_scaling(two)
    np.testing.assert_allclose(two.alpha_c, 0.5)
    np.testing.assert_array_equal(two.q_y, 2.0)
    with pytest.raises(ValueError):
        apply_gradient_scaling(init_ones())


def test_gradient_scaling_identity_and_idempotence():
    t = apply_gradient_scaling(_random_tables(1), 2.0)
    np.testing.assert_allclose(t.alpha_y * t.q_y**2, 2.0, rtol=1e-14)
    np.testing.assert_allclose(t.alpha_c * t.q_c**2, 2.0, rtol=1e-14)
    assert apply_gradient_scaling(t).equals(t)


def test_round_trip_lossless(tmp_path):
    t = _random_tables(2, hbar=0.7)
    save_tables(t, tmp_path / "t.json")
    assert load_tables(tmp_path / "t.json").equals(t)


def test_missing_field_is_named():
    text = dumps_tables(_random_tables(3))
    lines = [ln for ln in text.splitlines() if '"q_c"' not in ln]
    with pytest.raises(TableFormatError, match="q_c"):
        loads_tables("\n".join(lines))


def test_negative_entry_rejected_with_line():
    text = dumps_tables(_random_tables(4)).replace('"q_y": [', '"q_y": [-1, ', 1)
    text = text.replace(", ", ", ", 1)
    doc_lines = text.splitlines()
    # keep 64 entries by dropping the last one of q_y
    qy_line = next(i for i, ln in enumerate(doc_lines) if '"q_y"' in ln)
    head, _, _ = doc_lines[qy_line].rpartition(", ")
    doc_lines[qy_line] = head + "],"
    with pytest.raises(TableFormatError, match=r"line \d+.*q_y"):
        loads_tables("\n".join(doc_lines))


def test_malformed_json():
    with pytest.raises(TableFormatError, match="line"):
        loads_tables("{ not json")

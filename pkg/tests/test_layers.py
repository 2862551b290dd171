import numpy as np
import pytest

from oracles import rbf_histogram
from texton import functional as F
from texton.gradcheck import layer_suite
from texton.layers import EncodingLayer, FractalPooling, GlobalPooling, HistogramLayer
from texton.tensor import ShapeError, Tensor, no_grad


def test_layer_gradient_suite():
    reports = layer_suite(n_coords=100)
    assert {r.name for r in reports} == {"histogram", "encoding", "fap", "gap",
                                         "residual_block", "fc_head"}
    for r in reports:
        assert r.passed, str(r)
        assert r.n_checked >= 100


def test_histogram_matches_oracle(f64, rng):
    layer = HistogramLayer(8, rng, n_bins=3, reduced_channels=4, groups=2)
    layer.centers.data += rng.normal(0, 0.3, layer.centers.shape)
    layer.log_widths.data += rng.normal(0, 0.3, layer.log_widths.shape)
    x = Tensor(rng.standard_normal((2, 8, 6, 4)))
    out = layer(x).data
    pooled = F.avg_pool2d(x, 2, 2).data
    w = layer.reduce.weight.data[:, :, 0, 0]
    for n in range(2):
        reduced = np.zeros((4, 3 * 2))
        for oc in range(4):
            g = oc // 2
            for ic in range(4):
                reduced[oc] += w[oc, ic] * pooled[n, g * 4 + ic].reshape(-1)
        ref = rbf_histogram(reduced, layer.centers.data, layer.log_widths.data)
        np.testing.assert_allclose(out[n], ref.reshape(-1), atol=1e-12)


def test_histogram_shape_groups_and_range(rng):
    layer = HistogramLayer(512, rng)
    assert layer.groups == 32 and layer.output_len == 128
    out = layer(Tensor(rng.standard_normal((2, 512, 7, 7)).astype(np.float32)))
    assert out.shape == (2, 128)
    assert ((out.data >= 0) & (out.data <= 1)).all()


def test_histogram_normalized_bins_sum_to_one(f64, rng):
    layer = HistogramLayer(4, rng, n_bins=5, reduced_channels=4, groups=4, normalize_bins=True)
    counts = layer(Tensor(rng.standard_normal((2, 4, 4, 4)))).data.reshape(2, 4, 5)
    np.testing.assert_allclose(counts.sum(axis=2), 1.0, atol=1e-4)


def test_encoding_invariants(f64, rng):
    layer = EncodingLayer(16, rng, n_codes=8, out_features=12)
    x = Tensor(rng.standard_normal((3, 16, 5, 5)))
    weights, resid = layer.assign(x)
    np.testing.assert_allclose(weights.data.sum(axis=2), 1.0, atol=1e-6)
    enc = layer.encode(x).data
    np.testing.assert_allclose(np.linalg.norm(enc, axis=1), 1.0, atol=1e-6)
    assert layer(x).shape == (3, 12)


def test_encoding_single_codeword_assigns_everything(f64, rng):
    layer = EncodingLayer(6, rng, n_codes=1, out_features=4)
    weights, _ = layer.assign(Tensor(rng.standard_normal((2, 6, 3, 3))))
    np.testing.assert_array_equal(weights.data, 1.0)


def test_encoding_channel_mismatch(rng):
    with pytest.raises(ShapeError):
        EncodingLayer(6, rng).assign(Tensor(np.zeros((1, 5, 2, 2))))


def test_fap_soft_binning_matches_oracle(f64, rng):
    layer = FractalPooling(n_bins=5)
    d = rng.uniform(2, 3, (2, 1, 4, 3))
    out = layer.pool_dimensions(Tensor(d)).data
    c = np.tile(layer.centers.data, (1, 1))
    lw = np.tile(layer.log_widths.data, (1, 1))
    for n in range(2):
        np.testing.assert_allclose(out[n], rbf_histogram(d[n].reshape(1, -1), c, lw)[0])


def test_fap_centres_span_two_to_three():
    layer = FractalPooling()
    np.testing.assert_allclose(layer.centers.data[[0, -1]], [2.0, 3.0])
    assert layer.output_len == 16


def test_fap_forward_shape_and_size_check(rng):
    layer = FractalPooling(upsample=4)
    assert layer(Tensor(rng.random((2, 8, 7, 7)).astype(np.float32))).shape == (2, 16)
    with pytest.raises(ShapeError):
        FractalPooling(upsample=2)(Tensor(rng.random((1, 8, 7, 7))))


def test_gap_pool_is_spatial_mean(f64, rng):
    layer = GlobalPooling(6, rng, out_features=5, pool_kernel=3)
    x = Tensor(rng.standard_normal((4, 6, 3, 3)))
    np.testing.assert_allclose(layer.pool(x).data, x.data.mean(axis=(2, 3)))
    assert layer(x).shape == (4, 5)
    with pytest.raises(ShapeError):
        layer(Tensor(np.zeros((2, 6, 4, 4))))


def test_gap_eval_uses_running_stats(f64, rng):
    layer = GlobalPooling(3, rng, out_features=2)
    x = Tensor(rng.standard_normal((5, 3, 2, 2)))
    layer(x)
    layer.eval()
    with no_grad():
        single = layer(x[np.array([0])]).data
        batch = layer(x).data
    np.testing.assert_allclose(single[0], batch[0])

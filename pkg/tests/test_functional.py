"""
Unit tests for the Tensor engine and the differentiable kernels in src.functional.
Forward results are compared against hand-computed values and brute-force loops.
"""
import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from src import functional as F
from src.errors import DataValidationError, DimensionError
from src.tensor import Tensor


def bilinear_oracle(image, out_h, out_w):
    """Per-pixel half-pixel bilinear sampling of a 2-D array"""
    h, w = image.shape
    out = np.zeros((out_h, out_w))
    for y in range(out_h):
        sy = min(max((y + 0.5) * h / out_h - 0.5, 0.0), h - 1)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for x in range(out_w):
            sx = min(max((x + 0.5) * w / out_w - 0.5, 0.0), w - 1)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            top = (1 - fx) * image[y0, x0] + fx * image[y0, x1]
            bottom = (1 - fx) * image[y1, x0] + fx * image[y1, x1]
            out[y, x] = (1 - fy) * top + fy * bottom
    return out


def conv2d_oracle(x, weight, stride, padding, dilation):
    n, c, h, w = x.shape
    c_out, _, kh, kw = weight.shape
    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    out_w = (w + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, c_out, out_h, out_w))
    for b in range(n):
        for o in range(c_out):
            for y in range(out_h):
                for xx in range(out_w):
                    total = 0.0
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                total += weight[o, ci, i, j] * padded[b, ci, y * stride + i * dilation,
                                                                      xx * stride + j * dilation]
                    out[b, o, y, xx] = total
    return out


@pytest.mark.unit
class TestTensor:
    """Tests for the reverse-mode engine"""

    def test_integer_data_is_promoted_to_float(self):
        """Test that non-float inputs become float32 leaves"""
        t = Tensor([1, 2, 3])
        assert t.dtype == np.float32

    def test_gradient_accumulates_over_shared_inputs(self):
        """Test that a tensor used twice receives the sum of both gradients"""
        x = Tensor(np.ones((1, 2, 2, 2)), requires_grad=True)
        out = F.concat_channels([x, x])
        out.backward()
        np.testing.assert_array_equal(x.grad, np.full((1, 2, 2, 2), 2.0))

    def test_backward_on_constant_raises(self):
        """Test that backward() requires a graph"""
        with pytest.raises(RuntimeError):
            Tensor(np.ones(3)).backward()

    def test_seed_gradient_shape_is_checked(self):
        """Test that a mis-shaped seed gradient is rejected"""
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            F.relu(x).backward(np.ones(3))

    def test_detach_cuts_the_graph(self):
        """Test that detached tensors carry no creator"""
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        d = F.relu(x).detach()
        assert d.creator is None and not d.requires_grad


@pytest.mark.unit
class TestConv1x1:
    """Tests for the pointwise channel-mixing convolution"""

    def test_two_channel_example(self):
        """Test [[1,1],[1,-1]] applied to (1, 2)"""
        x = Tensor(np.array([1.0, 2.0]).reshape(1, 2, 1, 1))
        w = Tensor(np.array([[1.0, 1.0], [1.0, -1.0]]))
        out = F.linear1x1(x, w, Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data.reshape(-1), [3.0, -1.0])

    def test_identity_weight_returns_input(self, rng):
        """Test that an identity matrix leaves the map unchanged"""
        x = rng.standard_normal((2, 3, 4, 5))
        out = F.linear1x1(Tensor(x), Tensor(np.eye(3)))
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_linearity(self, rng):
        """Test f(a x + b y) = a f(x) + b f(y) without bias"""
        w = Tensor(rng.standard_normal((4, 3)))
        x = rng.standard_normal((1, 3, 3, 3))
        y = rng.standard_normal((1, 3, 3, 3))
        lhs = F.linear1x1(Tensor(2.5 * x - 0.7 * y), w).data
        rhs = 2.5 * F.linear1x1(Tensor(x), w).data - 0.7 * F.linear1x1(Tensor(y), w).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    @pytest.mark.negative
    def test_channel_mismatch(self, rng):
        """Test that C_in disagreeing with the weight raises DimensionError"""
        with pytest.raises(DimensionError):
            F.linear1x1(Tensor(rng.standard_normal((1, 3, 2, 2))), Tensor(rng.standard_normal((4, 2))))


@pytest.mark.unit
class TestBilinearResize:
    """Tests for half-pixel bilinear interpolation"""

    def test_two_by_two_upsampled_to_four_by_four(self):
        """Test the hand-computed 2x2 -> 4x4 result"""
        x = Tensor(np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2))
        expected = np.array([
            [0.0, 0.25, 0.75, 1.0],
            [0.5, 0.75, 1.25, 1.5],
            [1.5, 1.75, 2.25, 2.5],
            [2.0, 2.25, 2.75, 3.0],
        ])
        np.testing.assert_allclose(F.bilinear_resize(x, 4, 4).data[0, 0], expected, atol=1e-12)

    def test_matches_per_pixel_oracle(self, rng):
        """Test random up- and down-sampling against the scalar reference"""
        for _ in range(20):
            h, w = rng.integers(1, 7, size=2)
            out_h, out_w = rng.integers(1, 13, size=2)
            image = rng.standard_normal((h, w))
            out = F.bilinear_resize(Tensor(image.reshape(1, 1, h, w)), int(out_h), int(out_w)).data[0, 0]
            np.testing.assert_allclose(out, bilinear_oracle(image, out_h, out_w), atol=1e-12)

    def test_constant_map_stays_constant(self):
        """Test that resizing a constant map is exact"""
        x = Tensor(np.full((1, 2, 3, 5), 0.37))
        out = F.bilinear_resize(x, 11, 7).data
        assert np.all(out == 0.37)

    def test_equal_size_is_identity_copy(self, rng):
        """Test that in == out returns an equal array that is not the same buffer"""
        data = rng.standard_normal((1, 2, 4, 4))
        out = F.bilinear_resize(Tensor(data), 4, 4).data
        np.testing.assert_array_equal(out, data)
        assert out is not data

    @pytest.mark.negative
    def test_empty_output_rejected(self):
        """Test that a zero output size raises DataValidationError"""
        with pytest.raises(DataValidationError):
            F.bilinear_resize(Tensor(np.ones((1, 1, 2, 2))), 0, 3)


@pytest.mark.unit
class TestSoftmaxSpatial:
    """Tests for the spatial softmax that normalizes weighting maps"""

    def test_two_location_example(self):
        """Test (0, ln 3) -> (0.25, 0.75)"""
        a = Tensor(np.array([0.0, math.log(3.0)]).reshape(1, 1, 1, 2))
        np.testing.assert_allclose(F.softmax_spatial(a).data.reshape(-1), [0.25, 0.75], atol=1e-12)

    def test_matches_scalar_loops(self, rng):
        """Test exp(a_i(p)) / sum_q exp(a_i(q)) over 100 random instances"""
        for _ in range(100):
            n, k = rng.integers(1, 3), rng.integers(1, 9)
            h, w = rng.integers(1, 9, size=2)
            logits = rng.standard_normal((n, k, h, w)) * rng.uniform(0.1, 20.0)
            expected = np.zeros_like(logits)
            for b in range(n):
                for i in range(k):
                    peak = max(logits[b, i, y, x] for y in range(h) for x in range(w))
                    total = 0.0
                    for y in range(h):
                        for x in range(w):
                            total += math.exp(logits[b, i, y, x] - peak)
                    for y in range(h):
                        for x in range(w):
                            expected[b, i, y, x] = math.exp(logits[b, i, y, x] - peak) / total
            np.testing.assert_allclose(F.softmax_spatial(Tensor(logits)).data, expected, rtol=1e-9, atol=1e-12)

    def test_maps_sum_to_one(self, rng):
        """Test that every (n, i) map is a probability distribution"""
        out = F.softmax_spatial(Tensor(rng.standard_normal((2, 5, 3, 4)) * 10)).data
        assert np.all(out > 0)
        np.testing.assert_allclose(out.sum(axis=(2, 3)), np.ones((2, 5)), atol=1e-12)

    def test_shift_invariance(self, rng):
        """Test that adding a per-map constant does not change the result"""
        a = rng.standard_normal((1, 3, 4, 4))
        shifted = a + rng.standard_normal((1, 3, 1, 1)) * 50
        np.testing.assert_allclose(F.softmax_spatial(Tensor(a)).data, F.softmax_spatial(Tensor(shifted)).data,
                                   atol=1e-12)

    @pytest.mark.edge
    def test_constant_logits_give_uniform_map(self):
        """Test that equal logits give 1/(H W) everywhere"""
        out = F.softmax_spatial(Tensor(np.zeros((1, 1, 2, 4)))).data
        np.testing.assert_allclose(out, np.full((1, 1, 2, 4), 1 / 8))


@pytest.mark.unit
class TestConcatAndBroadcast:
    """Tests for channel concatenation, global averaging and broadcast addition"""

    def test_concat_order_and_shape(self, rng):
        """Test that inputs are stacked along channels in order"""
        a, b = rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((1, 1, 3, 3))
        out = F.concat_channels([Tensor(a), Tensor(b)]).data
        assert out.shape == (1, 3, 3, 3)
        np.testing.assert_array_equal(out[:, 2:], b)

    @pytest.mark.negative
    def test_concat_spatial_mismatch(self, rng):
        """Test that differing H or W raises DimensionError"""
        with pytest.raises(DimensionError):
            F.concat_channels([Tensor(rng.standard_normal((1, 1, 3, 3))), Tensor(rng.standard_normal((1, 1, 2, 3)))])

    def test_global_avg_and_broadcast_add(self, rng):
        """Test that x + mean(x) matches numpy broadcasting"""
        x = rng.standard_normal((2, 3, 4, 5))
        mean = F.global_avg(Tensor(x))
        assert mean.shape == (2, 3, 1, 1)
        np.testing.assert_allclose(F.add_broadcast(Tensor(x), mean).data, x + x.mean(axis=(2, 3), keepdims=True))

    @pytest.mark.negative
    def test_broadcast_shape_checked(self, rng):
        """Test that a non (N, D, 1, 1) addend is rejected"""
        with pytest.raises(DimensionError):
            F.add_broadcast(Tensor(rng.standard_normal((1, 3, 2, 2))), Tensor(rng.standard_normal((1, 2, 1, 1))))


@pytest.mark.unit
class TestCodewordKernels:
    """Brute-force checks of weighted pooling and codeword assembly"""

    def test_weighted_pool_matches_loops(self, rng):
        """Test c_i = sum_p A_tilde_i(p) B(p) over 100 random instances"""
        for _ in range(100):
            n, d, k = rng.integers(1, 3), rng.integers(1, 9), rng.integers(1, 9)
            h, w = rng.integers(1, 9, size=2)
            basis = rng.standard_normal((n, d, h, w))
            weights = F.softmax_spatial(Tensor(rng.standard_normal((n, k, h, w)))).data
            expected = np.zeros((n, d, k))
            for b in range(n):
                for i in range(k):
                    for y in range(h):
                        for x in range(w):
                            expected[b, :, i] += weights[b, i, y, x] * basis[b, :, y, x]
            out = F.weighted_pool(Tensor(basis), Tensor(weights)).data
            np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_assemble_matches_loops(self, rng):
        """Test f(p) = sum_i W_i(p) c_i over 100 random instances"""
        for _ in range(100):
            n, d, k = rng.integers(1, 3), rng.integers(1, 9), rng.integers(1, 9)
            h, w = rng.integers(1, 9, size=2)
            weights = rng.standard_normal((n, k, h, w))
            codewords = rng.standard_normal((n, d, k))
            expected = np.zeros((n, d, h, w))
            for b in range(n):
                for y in range(h):
                    for x in range(w):
                        for i in range(k):
                            expected[b, :, y, x] += weights[b, i, y, x] * codewords[b, :, i]
            out = F.assemble(Tensor(weights), Tensor(codewords)).data
            np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_assemble_largest_toy_is_dense_product(self, rng):
        """Test n = 8, D = 8 on an 8x8 map against a reshaped matrix product"""
        weights = rng.standard_normal((2, 8, 8, 8))
        codewords = rng.standard_normal((2, 8, 8))
        expected = np.einsum("bdk,bkp->bdp", codewords, weights.reshape(2, 8, 64)).reshape(2, 8, 8, 8)
        np.testing.assert_allclose(F.assemble(Tensor(weights), Tensor(codewords)).data, expected, atol=1e-10)

    @pytest.mark.negative
    def test_assemble_codeword_count_mismatch(self, rng):
        """Test that W channels must equal the number of codewords"""
        with pytest.raises(DimensionError):
            F.assemble(Tensor(rng.standard_normal((1, 3, 2, 2))), Tensor(rng.standard_normal((1, 4, 2))))


@pytest.mark.unit
class TestCrossEntropyMask:
    """Tests for the masked per-pixel cross entropy"""

    def test_single_pixel_closed_form(self):
        """Test logits (1, 2, 3) with label 0 against log-sum-exp"""
        logits = Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1, 1))
        loss = F.cross_entropy_mask(logits, np.zeros((1, 1, 1), dtype=np.int64)).item()
        expected = math.log(math.exp(1) + math.exp(2) + math.exp(3)) - 1.0
        assert loss == pytest.approx(expected, abs=1e-9)

    def test_ignored_pixels_do_not_contribute(self, rng):
        """Test that ignored pixels change neither the loss nor the gradient"""
        logits = rng.standard_normal((1, 3, 2, 2))
        labels = np.array([[[0, 1], [F.IGNORE_INDEX, 2]]])
        full = Tensor(logits, requires_grad=True)
        loss = F.cross_entropy_mask(full, labels)
        loss.backward()
        valid = [(0, 0), (0, 1), (1, 1)]
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        expected = -np.mean([log_probs[0, labels[0, y, x], y, x] for y, x in valid])
        assert loss.item() == pytest.approx(expected, abs=1e-9)
        np.testing.assert_array_equal(full.grad[0, :, 1, 0], np.zeros(3))

    @pytest.mark.edge
    def test_all_pixels_ignored(self, rng):
        """Test that a fully ignored batch gives zero loss and zero gradient"""
        logits = Tensor(rng.standard_normal((1, 2, 2, 2)), requires_grad=True)
        loss = F.cross_entropy_mask(logits, np.full((1, 2, 2), F.IGNORE_INDEX))
        loss.backward()
        assert loss.item() == 0.0
        assert not np.any(logits.grad)

    @pytest.mark.negative
    def test_out_of_range_label(self, rng):
        """Test that labels outside [0, K) raise DataValidationError"""
        with pytest.raises(DataValidationError):
            F.cross_entropy_mask(Tensor(rng.standard_normal((1, 2, 1, 1))), np.array([[[5]]]))


@pytest.mark.unit
class TestBatchNorm:
    """Tests for batch normalization in both modes"""

    def test_training_mode_normalizes_and_updates_running_stats(self, rng):
        """Test zero mean / unit variance output and the 0.9 momentum update"""
        x = rng.standard_normal((4, 2, 3, 3)) * 3 + 1
        running_mean, running_var = np.zeros(2), np.ones(2)
        out = F.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), running_mean, running_var,
                           training=True).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), np.zeros(2), atol=1e-10)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), np.ones(2), atol=1e-3)
        np.testing.assert_allclose(running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))

    def test_eval_mode_uses_running_stats(self, rng):
        """Test that evaluation mode applies the stored statistics"""
        x = rng.standard_normal((1, 2, 2, 2))
        mean, var = np.array([0.5, -1.0]), np.array([4.0, 0.25])
        out = F.batch_norm(Tensor(x), Tensor(np.array([2.0, 1.0])), Tensor(np.array([0.0, 3.0])), mean, var,
                           training=False, eps=0.0).data
        expected = (x - mean.reshape(1, 2, 1, 1)) / np.sqrt(var).reshape(1, 2, 1, 1)
        expected = expected * np.array([2.0, 1.0]).reshape(1, 2, 1, 1) + np.array([0.0, 3.0]).reshape(1, 2, 1, 1)
        np.testing.assert_allclose(out, expected, atol=1e-12)


@pytest.mark.unit
class TestConv2dAndRelu:
    """Tests for the k x k convolution used by the toy backbone"""

    @pytest.mark.parametrize("kernel,stride,padding,dilation", [
        (3, 1, 1, 1), (3, 2, 1, 1), (3, 1, 2, 2), (1, 2, 0, 1), (3, 2, 0, 2),
    ])
    def test_matches_brute_force(self, rng, kernel, stride, padding, dilation):
        """Test the im2col result against nested loops"""
        x = rng.standard_normal((2, 3, 7, 7))
        w = rng.standard_normal((2, 3, kernel, kernel))
        out = F.conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding, dilation=dilation).data
        np.testing.assert_allclose(out, conv2d_oracle(x, w, stride, padding, dilation), atol=1e-10)

    @pytest.mark.negative
    def test_empty_output_rejected(self, rng):
        """Test that a kernel larger than the padded input raises DimensionError"""
        with pytest.raises(DimensionError):
            F.conv2d(Tensor(rng.standard_normal((1, 1, 2, 2))), Tensor(rng.standard_normal((1, 1, 3, 3))))

    def test_relu_clamps_negatives(self):
        """Test max(0, x)"""
        out = F.relu(Tensor(np.array([-1.0, 0.0, 2.0]).reshape(1, 3, 1, 1))).data.reshape(-1)
        np.testing.assert_array_equal(out, [0.0, 0.0, 2.0])

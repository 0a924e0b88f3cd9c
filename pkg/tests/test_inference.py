"""
Tests for multi-scale / flipped inference and dataset evaluation.
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from src import functional as F
from src.errors import DataValidationError
from src.inference import crop_to_content, evaluate_dataset, multiscale_infer, pad_to_multiple
from src.model import EfficientFCN


class PointwiseModel:
    """Per-pixel linear classifier; rejects sizes that are not multiples of 32"""

    def __init__(self, num_classes=3, seed=0, ramp=0.0):
        self.weight = np.random.default_rng(seed).standard_normal((num_classes, 3))
        self.ramp = ramp
        self.sizes = []

    def __call__(self, images):
        assert images.shape[2] % 32 == 0 and images.shape[3] % 32 == 0
        self.sizes.append(images.shape[2:])
        logits = np.tensordot(self.weight, images, axes=([1], [1])).transpose(1, 0, 2, 3)
        if self.ramp:
            logits[:, 0] += self.ramp * np.linspace(0, 1, images.shape[3])[None, None, :]
        return logits


@pytest.mark.unit
class TestMultiscaleInfer:
    """Probability averaging over scales and flips"""

    def test_single_scale_without_flip_is_plain_forward(self, rng):
        """Test bitwise equality with softmax(model(x)) for scales = [1.0]"""
        model = PointwiseModel()
        image = rng.random((1, 3, 64, 64))
        np.testing.assert_array_equal(multiscale_infer(model, image, [1.0]), F.softmax_channels(model(image)))

    def test_flip_matches_two_pass_oracle(self, rng):
        """Test the flipped pass is mirrored back and averaged"""
        model = PointwiseModel(ramp=2.0)
        image = rng.random((1, 3, 32, 64))
        direct = F.softmax_channels(model(image))
        mirrored = F.softmax_channels(model(np.ascontiguousarray(image[:, :, :, ::-1])))[:, :, :, ::-1]
        np.testing.assert_allclose(multiscale_infer(model, image, [1.0], flip=True), (direct + mirrored) / 2,
                                   atol=1e-12)

    def test_flip_is_neutral_for_symmetric_input(self, rng):
        """Test that a mirror-symmetric image gives the same result with and without flip"""
        half = rng.random((1, 3, 32, 32))
        image = np.concatenate([half, half[:, :, :, ::-1]], axis=3)
        model = PointwiseModel()
        np.testing.assert_allclose(multiscale_infer(model, image, [1.0], flip=True),
                                   multiscale_infer(model, image, [1.0], flip=False), atol=1e-6)

    def test_non_multiple_scales_are_padded(self, rng):
        """Test that a 0.75 x 64 = 48 pass is padded to 64 and cropped back"""
        model = PointwiseModel()
        probs = multiscale_infer(model, rng.random((2, 3, 64, 64)), [0.75, 1.25])
        assert probs.shape == (2, 3, 64, 64)
        assert model.sizes == [(64, 64), (96, 96)]
        np.testing.assert_allclose(probs.sum(axis=1), np.ones((2, 64, 64)), atol=1e-12)

    def test_toy_model_probabilities(self, tiny_backbone_config, tiny_model_hgd_config, rng):
        """Test the trained-model entry point over two scales with flip"""
        model = EfficientFCN.initialize(tiny_backbone_config, tiny_model_hgd_config)
        probs = multiscale_infer(model.predict_logits, rng.random((1, 3, 64, 64)), [0.5, 1.0], flip=True)
        assert probs.shape == (1, 4, 64, 64)
        np.testing.assert_allclose(probs.sum(axis=1), np.ones((1, 64, 64)), atol=1e-5)

    @pytest.mark.negative
    @pytest.mark.parametrize("scales", [[], [0.0], [-0.5, 1.0]])
    def test_invalid_scales(self, scales, rng):
        """Test that empty or non-positive scales raise DataValidationError"""
        with pytest.raises(DataValidationError):
            multiscale_infer(PointwiseModel(), rng.random((1, 3, 32, 32)), scales)


@pytest.mark.unit
class TestPadding:
    """Zero padding to the next multiple of 32"""

    def test_pads_symmetrically(self):
        """Test 48 -> 64 with the content offset by 8"""
        padded, offsets = pad_to_multiple(np.ones((1, 1, 48, 40)))
        assert padded.shape == (1, 1, 64, 64)
        assert offsets == (8, 12)
        assert padded[0, 0, 8:56, 12:52].all() and padded.sum() == 48 * 40

    @pytest.mark.edge
    def test_multiple_is_untouched(self):
        """Test that aligned inputs are returned as is"""
        x = np.ones((1, 1, 64, 32))
        padded, offsets = pad_to_multiple(x)
        assert padded is x and offsets == (0, 0)

    def test_crop_to_content_inverts_padding(self, rng):
        """Test that a stride-1 crop of the padded array returns the original content"""
        x = rng.random((1, 2, 48, 40))
        padded, offsets = pad_to_multiple(x)
        np.testing.assert_array_equal(crop_to_content(padded, offsets, (48, 40)), x)

    def test_crop_to_content_at_stride(self):
        """Test the OS=32 cells overlapping rows 40..80 and columns 0..33 of a 4x3 grid"""
        grid = np.arange(12).reshape(1, 4, 3)
        cells = crop_to_content(grid, (40, 0), (40, 33), stride=32)
        np.testing.assert_array_equal(cells, grid[:, 1:3, 0:2])


@pytest.mark.integration
class TestEvaluateDataset:
    """Confusion-matrix evaluation over several images"""

    def test_parallel_equals_serial(self, rng):
        """Test that a worker pool gives the same metrics as a serial loop"""
        images = rng.random((4, 3, 32, 32))
        labels = rng.integers(0, 3, size=(4, 32, 32))
        model = PointwiseModel()
        serial = evaluate_dataset(model, images, labels, 3, scales=[1.0, 1.5], flip=True, workers=1)
        parallel = evaluate_dataset(model, images, labels, 3, scales=[1.0, 1.5], flip=True, workers=2)
        np.testing.assert_array_equal(serial.confusion, parallel.confusion)
        assert serial.confusion.sum() == 4 * 32 * 32

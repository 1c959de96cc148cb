"""
Tests for the differentiable operators: softmaxes, convolution, resampling, Sobel and point sampling.
"""

import numpy as np
import pytest

from utils.ops import (
    PointOutOfRange, avg_pool2d, bilinear_resize, conv2d, global_average_pool, interpolation_matrix,
    lattice, log_softmax, sample_points, scatter_add_points, sobel_response, softmax, tokens,
)
from utils.tensor import ShapeError, Tensor, TensorDomainError


class TestSoftmax:

    def test_known_values(self) -> None:
        """softmax([0, ln 3]) = [1/4, 3/4]."""
        out = softmax(Tensor([[0.0, np.log(3.0)]]), axis=-1)
        np.testing.assert_allclose(out.data, [[0.25, 0.75]])

    def test_shift_invariance_with_large_inputs(self) -> None:
        """Adding a large constant changes nothing and does not overflow."""
        x = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(softmax(Tensor(x + 1000.0)).data, softmax(Tensor(x)).data)

    def test_log_softmax_matches_log_of_softmax(self) -> None:
        x = Tensor(np.random.default_rng(0).normal(size=(3, 5)))
        np.testing.assert_allclose(log_softmax(x, axis=1).data, np.log(softmax(x, axis=1).data))

    def test_non_finite_input_is_a_domain_error(self) -> None:
        with pytest.raises(TensorDomainError):
            softmax(Tensor([0.0, np.nan]))
        with pytest.raises(TensorDomainError):
            log_softmax(Tensor([np.inf, 0.0]))


class TestConv2d:

    def test_all_ones(self) -> None:
        """A 3x3 ones kernel over a 3x3 ones input without padding sums to 9."""
        out = conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
        assert out.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == pytest.approx(9.0)

    def test_padding_and_stride_shapes(self) -> None:
        """H_out = (H + 2p - k) // s + 1."""
        x = Tensor(np.zeros((2, 3, 9, 7)))
        w = Tensor(np.zeros((4, 3, 3, 3)))
        assert conv2d(x, w, padding=1, stride=2).shape == (2, 4, 5, 4)

    def test_depthwise_keeps_channels_apart(self) -> None:
        """With groups == channels each output only sees its own input channel."""
        x = np.zeros((2, 4, 4))
        x[1] = 1.0
        out = conv2d(Tensor(x), Tensor(np.ones((2, 1, 3, 3))), padding=1, groups=2)
        assert np.all(out.data[0] == 0)
        assert out.data[1, 1, 1] == pytest.approx(9.0)
        assert out.data[1, 0, 0] == pytest.approx(4.0)

    def test_matches_scipy_correlate(self) -> None:
        """Single-channel output equals scipy's zero-padded cross-correlation."""
        from scipy.ndimage import correlate
        rng = np.random.default_rng(3)
        image = rng.normal(size=(6, 5))
        kernel = rng.normal(size=(3, 3))
        out = conv2d(Tensor(image[None]), Tensor(kernel[None, None]), padding=1)
        np.testing.assert_allclose(out.data[0], correlate(image, kernel, mode='constant'), atol=1e-12)

    def test_bias_is_added_per_channel(self) -> None:
        out = conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((2, 1, 1, 1))), bias=Tensor([1.0, -1.0]))
        np.testing.assert_allclose(out.data[:, 0, 0], [1.0, -1.0])

    def test_channel_mismatch(self) -> None:
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((1, 2, 3, 3))))


class TestResampling:

    def test_row_upsample(self) -> None:
        """[0, 1] resized to width 3 reads [0, 0.5, 1] with aligned corners."""
        out = bilinear_resize(Tensor(np.array([[[0.0, 1.0]]])), 1, 3)
        np.testing.assert_allclose(out.data, [[[0.0, 0.5, 1.0]]])

    def test_identity_when_size_unchanged(self) -> None:
        x = Tensor(np.ones((1, 2, 4, 4)))
        assert bilinear_resize(x, 4, 4) is x

    def test_interpolation_rows_sum_to_one(self) -> None:
        for n_in, n_out in [(2, 7), (5, 3), (4, 1), (1, 6), (8, 8)]:
            matrix = interpolation_matrix(n_in, n_out)
            np.testing.assert_allclose(matrix.sum(axis=1), np.ones(n_out))

    def test_corners_are_preserved(self) -> None:
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 1, 4, 5))
        out = bilinear_resize(Tensor(x), 13, 9).data
        for (a, b), (c, d) in [((0, 0), (0, 0)), ((0, -1), (0, -1)), ((-1, 0), (-1, 0)), ((-1, -1), (-1, -1))]:
            assert out[0, 0, a, b] == pytest.approx(x[0, 0, c, d])

    def test_rejects_empty_target(self) -> None:
        with pytest.raises(ShapeError):
            bilinear_resize(Tensor(np.ones((1, 4, 4))), 0, 4)

    def test_avg_pool(self) -> None:
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        np.testing.assert_allclose(avg_pool2d(x, 2).data[0, 0], [[2.5, 4.5], [10.5, 12.5]])
        with pytest.raises(ShapeError):
            avg_pool2d(Tensor(np.ones((1, 1, 3, 4))), 2)


class TestSobel:

    def test_constant_map_has_zero_interior_response(self) -> None:
        out = sobel_response(Tensor(np.full((1, 6, 6), 3.0))).data
        np.testing.assert_allclose(out[0, 1:-1, 1:-1], 0.0)

    def test_unit_step(self) -> None:
        """A vertical unit step between columns 2 and 3 responds with 4 on both sides."""
        image = np.zeros((1, 6, 6))
        image[0, :, 3:] = 1.0
        out = sobel_response(Tensor(image)).data[0]
        for row in range(1, 5):
            np.testing.assert_allclose(out[row, 1:5], [0.0, 4.0, 4.0, 0.0])

    def test_gradient_is_zero_on_flat_regions(self) -> None:
        """The magnitude derivative is defined as 0 where the response vanishes."""
        x = Tensor(np.full((1, 1, 5, 5), 2.0), requires_grad=True)
        sobel_response(x)[:, :, 2, 2].sum().backward()
        assert np.all(np.isfinite(x.grad))
        np.testing.assert_allclose(x.grad, 0.0)


class TestPoints:

    def test_integer_coordinates_read_grid_values(self) -> None:
        grid = np.arange(24.0).reshape(2, 3, 4)
        coords = np.array([[0, 0], [2, 3], [1, 2]])
        out = sample_points(Tensor(grid), coords).data
        np.testing.assert_array_equal(out, grid[:, coords[:, 0], coords[:, 1]])

    def test_midpoint_is_average(self) -> None:
        grid = np.array([[[0.0, 2.0], [4.0, 6.0]]])
        assert sample_points(Tensor(grid), [[0.5, 0.5]]).data[0, 0] == pytest.approx(3.0)

    def test_out_of_range(self) -> None:
        with pytest.raises(PointOutOfRange):
            sample_points(Tensor(np.zeros((1, 3, 3))), [[0.0, 2.5]])

    def test_scatter_touches_only_listed_pixels(self) -> None:
        dense = Tensor(np.zeros((2, 3, 3)), requires_grad=True)
        delta = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
        out = scatter_add_points(dense, [1], [2], delta)
        expected = np.zeros((2, 3, 3))
        expected[:, 1, 2] = [1.0, 2.0]
        np.testing.assert_array_equal(out.data, expected)
        (out * Tensor(np.arange(18.0).reshape(2, 3, 3))).sum().backward()
        np.testing.assert_allclose(delta.grad, [[5.0, 14.0]])


class TestTokens:

    def test_round_trip_is_row_major(self) -> None:
        grid = Tensor(np.arange(24.0).reshape(1, 2, 3, 4))
        view = tokens(grid)
        assert view.shape == (1, 12, 2)
        np.testing.assert_array_equal(view.data[0, 5], [5.0, 17.0])
        np.testing.assert_array_equal(lattice(view, 3, 4).data, grid.data)

    def test_lattice_rejects_wrong_count(self) -> None:
        with pytest.raises(ShapeError):
            lattice(Tensor(np.zeros((1, 5, 2))), 2, 3)

    def test_global_average_pool(self) -> None:
        x = Tensor(np.arange(8.0).reshape(1, 2, 2, 2))
        np.testing.assert_allclose(global_average_pool(x).data, [[1.5, 5.5]])

"""
Tests for the pyramid encoder: shapes, input checks and spatial locality.
"""

import numpy as np
import pytest

from network.encoder import InputSizeError, PyramidEncoder
from utils.tensor import Tensor


def _encoder():
    return PyramidEncoder(widths=(4, 8, 8, 8), rng=np.random.default_rng(0), dtype=np.float64)


class TestPyramidEncoder:

    def test_level_shapes_and_strides(self) -> None:
        """Levels sit at strides 2, 4, 8, 16 with the configured widths."""
        pyramid = _encoder().encode(Tensor(np.zeros((2, 3, 64, 32))))
        assert [level.shape for level in pyramid.levels] == [
            (2, 4, 32, 16), (2, 8, 16, 8), (2, 8, 8, 4), (2, 8, 4, 2)]
        assert pyramid.strides == (2, 4, 8, 16)
        assert pyramid.fine_map is pyramid.levels[1]

    @pytest.mark.parametrize('size', [(16, 64), (48, 40), (33, 64)])
    def test_rejects_bad_sizes(self, size) -> None:
        """Inputs must be at least 32 per side and divisible by 16."""
        with pytest.raises(InputSizeError):
            _encoder().encode(Tensor(np.zeros((1, 3) + size)))

    def test_receptive_fields(self) -> None:
        assert PyramidEncoder.receptive_fields() == [(2, 3), (4, 9), (8, 21), (16, 45)]

    def test_needs_four_widths(self) -> None:
        with pytest.raises(ValueError):
            PyramidEncoder(widths=(4, 8, 8))

    def test_locality_in_eval_mode(self) -> None:
        """A pixel outside a feature's receptive field does not change that feature."""
        encoder = _encoder().eval()
        rng = np.random.default_rng(5)
        image = rng.normal(size=(1, 3, 64, 64))
        moved = image.copy()
        moved[0, :, 63, 63] += 50.0
        before = encoder.encode(Tensor(image)).levels
        after = encoder.encode(Tensor(moved)).levels
        for (stride, radius), a, b in zip(PyramidEncoder.receptive_fields(), before, after):
            # feature (0, 0) reads pixels within ``radius`` of the origin only
            assert 63 > radius
            np.testing.assert_array_equal(a.data[0, :, 0, 0], b.data[0, :, 0, 0])

    def test_unbatched_input(self) -> None:
        pyramid = _encoder().encode(Tensor(np.zeros((3, 32, 32))))
        assert pyramid.levels[-1].shape == (1, 8, 2, 2)

"""
Tests for uncertainty-guided point refinement.
"""

import numpy as np
import pytest

from network.point_refine import PointRefiner, PointSet, budget_for, select_points, uncertainty
from utils.tensor import Tensor


class TestSelection:

    def test_margin_value(self) -> None:
        """Logits [ln 2, 0, 0, 0, 0, 0] give probabilities 2/7 and 1/7, margin 1/7."""
        logits = np.zeros((6, 1, 1))
        logits[0] = np.log(2.0)
        assert uncertainty(logits)[0, 0] == pytest.approx(1.0 / 7.0)

    def test_margin_needs_two_classes(self) -> None:
        with pytest.raises(ValueError):
            uncertainty(np.zeros((1, 2, 2)))

    def test_ties_keep_row_major_order(self) -> None:
        margins = np.array([[0.5, 0.1, 0.1],
                            [0.1, 0.9, 0.0]])
        points = select_points(margins, 3)
        assert points.indices.tolist() == [[1, 2], [0, 1], [0, 2]]
        np.testing.assert_allclose(points.margins, [0.0, 0.1, 0.1])

    def test_budget_larger_than_map(self) -> None:
        points = select_points(np.zeros((2, 2)), 10)
        assert len(points) == 4
        assert points.budget == 10

    def test_negative_budget(self) -> None:
        with pytest.raises(ValueError):
            select_points(np.zeros((2, 2)), -1)

    def test_budget_fraction(self) -> None:
        assert budget_for(32, 32, 0.01) == 10
        assert budget_for(4, 4, 0.001) == 1
        assert budget_for(32, 32, 0.0) == 0


class TestRefiner:

    def _inputs(self, rng):
        t3 = Tensor(rng.normal(size=(2, 8, 2, 2)))
        fine = Tensor(rng.normal(size=(2, 4, 8, 8)))
        logits = Tensor(rng.normal(size=(2, 6, 32, 32)))
        return t3, fine, logits

    def test_zero_init_is_identity(self, rng) -> None:
        refiner = PointRefiner(8, 4, 6, hidden=8, rng=rng)
        t3, fine, logits = self._inputs(rng)
        refined, points = refiner(t3, fine, logits)
        np.testing.assert_array_equal(refined.data, logits.data)
        assert [len(p) for p in points] == [10, 10]

    def test_only_selected_pixels_change(self, rng) -> None:
        refiner = PointRefiner(8, 4, 6, hidden=8, rng=rng)
        refiner.fc3.weight.assign(rng.normal(size=refiner.fc3.weight.shape))
        refiner.fc3.bias.assign(np.ones(6))
        t3, fine, logits = self._inputs(rng)
        refined, points = refiner(t3, fine, logits)
        changed = np.any(refined.data != logits.data, axis=1)
        for b, point_set in enumerate(points):
            expected = np.zeros((32, 32), dtype=bool)
            expected[point_set.indices[:, 0], point_set.indices[:, 1]] = True
            np.testing.assert_array_equal(changed[b], expected)

    def test_empty_point_set_returns_logits(self, rng) -> None:
        refiner = PointRefiner(8, 4, 6, hidden=8, rng=rng)
        t3, fine, logits = self._inputs(rng)
        empty = PointSet(indices=np.zeros((0, 2), dtype=int), budget=0, margins=np.zeros(0))
        single = logits[0]
        assert refiner.refine_one(empty, t3[0], fine[0], single) is single
        refined, _ = refiner(t3, fine, logits, point_sets=[empty, empty])
        np.testing.assert_array_equal(refined.data, logits.data)

    def test_selected_points_are_most_uncertain(self, rng) -> None:
        refiner = PointRefiner(8, 4, 6, hidden=8, rng=rng)
        _, _, logits = self._inputs(rng)
        point_set = refiner.select(logits)[0]
        margins = uncertainty(logits.data[0])
        threshold = np.sort(margins.ravel())[len(point_set) - 1]
        assert np.all(margins[point_set.indices[:, 0], point_set.indices[:, 1]] <= threshold)

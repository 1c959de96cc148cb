"""
Tests for the autodiff tensor: forward values, gradient routing and domain errors.
"""

import numpy as np
import pytest

from utils.tensor import ShapeError, Tensor, TensorDomainError, concat, stack


class TestArithmetic:
    """Forward values and hand-derived gradients of the elementary ops."""

    def test_add_broadcast_gradient_is_summed(self) -> None:
        """A broadcast operand receives the sum of the upstream gradient over the broadcast axes."""
        a = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.ones((1, 4)), requires_grad=True)
        (a + b).sum().backward()
        np.testing.assert_array_equal(a.grad, np.ones((3, 4)))
        np.testing.assert_array_equal(b.grad, np.full((1, 4), 3.0))

    def test_mul_and_div(self) -> None:
        """d(a*b)/da = b and d(a/b)/db = -a/b^2."""
        a = Tensor([2.0, 3.0], requires_grad=True)
        b = Tensor([4.0, 5.0], requires_grad=True)
        (a * b).sum().backward()
        np.testing.assert_allclose(a.grad, [4.0, 5.0])
        np.testing.assert_allclose(b.grad, [2.0, 3.0])

        a.zero_grad()
        b.zero_grad()
        (a / b).sum().backward()
        np.testing.assert_allclose(a.grad, [0.25, 0.2])
        np.testing.assert_allclose(b.grad, [-2.0 / 16, -3.0 / 25])

    def test_reflected_ops_with_ndarray(self) -> None:
        """``ndarray - Tensor`` yields a Tensor instead of an object array."""
        t = Tensor([1.0, 2.0], requires_grad=True)
        out = np.array([5.0, 5.0]) - t
        assert isinstance(out, Tensor)
        np.testing.assert_allclose(out.data, [4.0, 3.0])
        out.sum().backward()
        np.testing.assert_allclose(t.grad, [-1.0, -1.0])

    def test_pow(self) -> None:
        """d(x^3)/dx = 3x^2."""
        x = Tensor([2.0], requires_grad=True)
        (x ** 3).sum().backward()
        np.testing.assert_allclose(x.grad, [12.0])

    def test_matmul_batched(self) -> None:
        """Batched matmul gradients match the closed form."""
        rng = np.random.default_rng(0)
        a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        (a @ b).sum().backward()
        np.testing.assert_allclose(a.grad, np.broadcast_to(b.data.sum(axis=1), (2, 3, 4)))
        np.testing.assert_allclose(b.grad, np.broadcast_to(a.data.sum(axis=(0, 1))[:, None], (4, 5)))

    def test_matmul_rejects_vectors(self) -> None:
        """Operands need at least two dimensions."""
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]) @ Tensor([[1.0], [2.0]])


class TestElementwise:
    """Nonlinearities and their domains."""

    def test_log_rejects_non_positive(self) -> None:
        """log(0) is a domain error rather than -inf."""
        with pytest.raises(TensorDomainError):
            Tensor([1.0, 0.0]).log()

    def test_sqrt_rejects_negative(self) -> None:
        with pytest.raises(TensorDomainError):
            Tensor([-1.0]).sqrt()

    def test_sigmoid_is_stable_for_large_inputs(self) -> None:
        """Large magnitudes saturate without overflow warnings."""
        with np.errstate(over='raise'):
            value = Tensor([-1000.0, 0.0, 1000.0]).sigmoid().data
        np.testing.assert_allclose(value, [0.0, 0.5, 1.0])

    def test_relu_gradient_masks_negatives(self) -> None:
        x = Tensor([-1.0, 2.0], requires_grad=True)
        x.relu().sum().backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])


class TestTape:
    """Backward-pass bookkeeping."""

    def test_leaf_gradients_accumulate(self) -> None:
        """Two backward passes without zero_grad add up on leaves."""
        x = Tensor([1.0, 2.0], requires_grad=True)
        (x * 2).sum().backward()
        (x * 2).sum().backward()
        np.testing.assert_allclose(x.grad, [4.0, 4.0])

    def test_shared_subexpression(self) -> None:
        """A node used twice receives both contributions (d(y*y)/dx = 2y * 1)."""
        x = Tensor([3.0], requires_grad=True)
        y = x + 1.0
        (y * y).sum().backward()
        np.testing.assert_allclose(x.grad, [8.0])

    def test_backward_needs_scalar_without_seed(self) -> None:
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            (x * 2).backward()

    def test_detached_branch_has_no_tape(self) -> None:
        """Ops on tensors without gradients record nothing."""
        x = Tensor([1.0])
        y = x * 2 + 1
        assert not y.requires_grad
        assert y._prev == ()

    def test_deep_chain_does_not_recurse(self) -> None:
        """Graphs deeper than the recursion limit still back-propagate."""
        x = Tensor([1.0], requires_grad=True)
        y = x
        for _ in range(5000):
            y = y + 0.0
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [1.0])


class TestShapeOps:
    """Reshaping, indexing and joining."""

    def test_transpose_round_trip_gradient(self) -> None:
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        (x.transpose(1, 0) * Tensor(np.arange(6.0).reshape(3, 2))).sum().backward()
        np.testing.assert_allclose(x.grad, np.arange(6.0).reshape(3, 2).T)

    def test_getitem_repeated_index(self) -> None:
        """Fancy indexing with repeats scatters with accumulation."""
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        x[np.array([0, 0, 2])].sum().backward()
        np.testing.assert_allclose(x.grad, [2.0, 0.0, 1.0])

    def test_squeeze_requires_unit_axis(self) -> None:
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 3))).squeeze(0)

    def test_concat_and_stack_route_gradients(self) -> None:
        a = Tensor(np.ones((1, 2)), requires_grad=True)
        b = Tensor(np.ones((2, 2)), requires_grad=True)
        weights = Tensor(np.arange(6.0).reshape(3, 2))
        (concat([a, b], axis=0) * weights).sum().backward()
        np.testing.assert_allclose(a.grad, [[0.0, 1.0]])
        np.testing.assert_allclose(b.grad, [[2.0, 3.0], [4.0, 5.0]])

        c = Tensor([1.0, 2.0], requires_grad=True)
        d = Tensor([3.0, 4.0], requires_grad=True)
        out = stack([c, d], axis=0)
        assert out.shape == (2, 2)
        (out * Tensor([[1.0, 1.0], [2.0, 2.0]])).sum().backward()
        np.testing.assert_allclose(d.grad, [2.0, 2.0])

    def test_integer_input_becomes_float(self) -> None:
        assert Tensor([1, 2]).dtype == np.float64

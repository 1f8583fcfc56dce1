import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from csnet import autodiff as ad
from csnet.autodiff import Param, Tensor, backward, grad_check
from csnet.errors import ContractError, ShapeError


def test_matmul_identity():
    out = ad.matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[3.0], [4.0]]


def test_matmul_hand_dot_product():
    out = ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))


def test_matmul_gradient_matches_finite_differences(rng):
    a = Param(rng.normal(size=(3, 4)), "a")
    b = Param(rng.normal(size=(4, 2)), "b")
    # Squaring makes the scalar depend nonlinearly on both operands.
    fn = lambda: ad.sum_all(ad.mul(ad.matmul(a.value, b.value), ad.matmul(a.value, b.value)))
    assert grad_check(fn, [a, b], eps=1e-5) < 1e-6


def test_relu_definition():
    out = ad.relu(Tensor([0.9, -0.3, 0.0]))
    assert out.data.tolist() == [0.9, 0.0, 0.0]


def test_relu_all_negative_zero_gradient():
    p = Param([-1.0, -2.5, -0.1], "p")
    out = ad.sum_all(ad.relu(p.value))
    assert out.item() == 0.0
    backward(out)
    assert p.grad.tolist() == [0.0, 0.0, 0.0]


def test_relu_gradient_matches_finite_differences(rng):
    # Sampled away from the kink at zero.
    vals = rng.uniform(0.2, 1.5, size=8) * np.where(rng.uniform(size=8) < 0.5, -1, 1)
    p = Param(vals, "p")
    fn = lambda: ad.sum_all(ad.mul(ad.relu(p.value), ad.relu(p.value)))
    assert grad_check(fn, [p], eps=1e-6) < 1e-6


def test_elementwise_mul_ones_mask_is_identity():
    assert ad.mul(Tensor([3.0, 0.0]), Tensor([1.0, 1.0])).data.tolist() == [3.0, 0.0]


def test_elementwise_mul_zero_gates_dimension():
    assert ad.mul(Tensor([3.0, 5.0]), Tensor([1.0, 0.0])).data.tolist() == [3.0, 0.0]


def test_elementwise_mul_broadcast_gradient_both_operands(rng):
    a = Param(rng.normal(size=(4, 3)), "a")
    b = Param(rng.normal(size=3), "b")
    fn = lambda: ad.sum_all(ad.mul(ad.mul(a.value, b.value), ad.mul(a.value, b.value)))
    assert grad_check(fn, [a, b], eps=1e-5) < 1e-6


def test_elementwise_mul_incompatible_shapes():
    with pytest.raises(ShapeError):
        ad.mul(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))


def test_euclidean_norm_345_triangle():
    assert ad.euclidean_norm(Tensor([3.0, 4.0])).item() == 5.0


def test_euclidean_norm_zero_vector_gradient_policy():
    p = Param([0.0, 0.0], "p")
    out = ad.euclidean_norm(p.value)
    assert out.item() == 0.0
    backward(out)
    assert p.grad.tolist() == [0.0, 0.0]


def test_euclidean_norm_gradient_matches_finite_differences(rng):
    p = Param(rng.uniform(0.3, 1.0, size=8), "p")
    assert grad_check(lambda: ad.euclidean_norm(p.value), [p], eps=1e-6) < 1e-6


def test_hinge_negative_clamps():
    assert ad.hinge(Tensor(-1.3)).item() == 0.0


def test_hinge_positive_passes():
    assert ad.hinge(Tensor(2.2)).item() == 2.2


def test_hinge_subgradient_is_one_on_positive_side():
    p = Param(0.5, "p")
    out = ad.hinge(p.value)
    backward(out)
    assert float(p.grad) == 1.0


def test_hinge_rejects_non_scalar():
    with pytest.raises(ShapeError):
        ad.hinge(Tensor([1.0, 2.0]))


def test_grad_check_squared_norm_analytic():
    p = Param([1.0, -2.0, 0.5, 3.0, -0.7], "p")
    err = grad_check(lambda: ad.sum_all(ad.mul(p.value, p.value)), [p], eps=1e-5)
    assert err < 1e-9


def test_grad_check_constant_function_both_zero():
    p = Param([1.0, 2.0, 3.0], "p")
    fn = lambda: ad.scale(ad.sum_all(ad.sub(p.value, p.value)), 0.0)
    assert grad_check(fn, [p], eps=1e-5) == 0.0


def test_grad_check_rejects_non_scalar():
    p = Param([1.0, 2.0], "p")
    with pytest.raises(ContractError):
        grad_check(lambda: ad.relu(p.value), [p])


def test_grad_check_rejects_bad_eps():
    p = Param([1.0], "p")
    with pytest.raises(ContractError):
        grad_check(lambda: ad.sum_all(p.value), [p], eps=0.0)


def test_backward_requires_scalar():
    with pytest.raises(ContractError):
        backward(ad.relu(Tensor([1.0, 2.0])))


def test_forward_bit_identical_across_runs(rng):
    a = rng.normal(size=(5, 7))
    b = rng.normal(size=(7, 3))
    first = ad.matmul(Tensor(a), Tensor(b)).data
    for _ in range(3):
        again = ad.matmul(Tensor(a.copy()), Tensor(b.copy())).data
        assert np.array_equal(first, again)


def test_gradient_accumulation_is_additive(rng):
    # One graph use per parameter: the accumulation doubles exactly.
    a = Param(rng.normal(size=(3, 3)), "a")
    b = Param(rng.normal(size=(3, 2)), "b")
    loss = ad.sum_all(ad.relu(ad.matmul(a.value, b.value)))
    backward(loss)
    once_a, once_b = a.grad.copy(), b.grad.copy()
    backward(loss)
    assert np.array_equal(a.grad, 2.0 * once_a)
    assert np.array_equal(b.grad, 2.0 * once_b)


def test_zero_grads_resets():
    p = Param([1.0, 2.0], "p")
    backward(ad.sum_all(p.value))
    assert p.grad.tolist() == [1.0, 1.0]
    ad.zero_grads([p])
    assert p.grad.tolist() == [0.0, 0.0]


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6))
def test_relu_nonnegative_and_idempotent(vals):
    out = ad.relu(Tensor(vals))
    assert (out.data >= 0).all()
    assert np.array_equal(ad.relu(out).data, out.data)


@given(
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
)
def test_sub_then_add_roundtrip(xs, ys):
    a, b = Tensor(xs), Tensor(ys)
    back = ad.add(ad.sub(a, b), b)
    assert np.allclose(back.data, a.data, atol=1e-12)


def test_rows_gather_and_scatter_gradient(rng):
    a = Param(rng.normal(size=(5, 3)), "a")
    idx = [0, 2, 2, 4]
    fn = lambda: ad.sum_all(ad.mul(ad.rows(a.value, idx), ad.rows(a.value, idx)))
    assert grad_check(fn, [a], eps=1e-5) < 1e-6


def test_col_selects_column_and_bounds():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert ad.col(a, 1).data.tolist() == [2.0, 4.0]
    with pytest.raises(IndexError):
        ad.col(a, 2)


def test_logsumexp_and_pick_cross_entropy_gradient(rng):
    w = Param(rng.normal(size=(4, 3)), "w")
    labels = [0, 2, 1, 1]
    fn = lambda: ad.mean_all(ad.sub(ad.logsumexp_rows(w.value), ad.pick(w.value, labels)))
    assert grad_check(fn, [w], eps=1e-6) < 1e-6


def test_every_registered_op_has_a_name():
    expected = {
        "matmul", "transpose", "add", "sub", "mul", "scale", "add_scalar",
        "relu", "hinge", "euclidean_norm", "row_norms", "sum_all", "mean_all",
        "rows", "col", "logsumexp_rows", "pick",
    }
    assert set(ad.OPS) == expected

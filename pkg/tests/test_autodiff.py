"""Per-op gradient checks for the autodiff engine against central differences."""

import numpy as np
import pytest

from nirfex import autodiff as ad
from nirfex.autodiff import Tensor
from nirfex.gradcheck import grad_check

RNG = np.random.default_rng(42)


def check(build, params, tol=1e-6):
    report = grad_check(build, params, eps=1e-6, tol=tol)
    assert report.passed, report.failures()


def leaf(shape, scale=1.0):
    return Tensor(RNG.normal(scale=scale, size=shape), requires_grad=True)


def test_add_broadcast():
    a, b = leaf((3, 4)), leaf((4,))
    check(lambda: ad.sum_(ad.mul(ad.add(a, b), ad.add(a, b))), {"a": a, "b": b})


def test_sub_and_scalar_ops():
    a = leaf((2, 3))
    check(lambda: ad.sum_(ad.mul(ad.sub(2.0, a), 3.0)), {"a": a})


def test_mul_broadcast_scalar_tensor():
    a, s = leaf((2, 3)), leaf(())
    check(lambda: ad.sum_(ad.mul(a, s) * ad.mul(a, s)), {"a": a, "s": s})


def test_matmul_plain_and_batched():
    a, b = leaf((3, 4)), leaf((4, 2))
    check(lambda: ad.sum_(ad.matmul(a, b)), {"a": a, "b": b})
    zb = leaf((5, 3, 4))
    w = leaf((4, 4))
    check(lambda: ad.sum_(ad.mul(ad.matmul(zb, w), ad.matmul(zb, w))), {"z": zb, "w": w})


def test_matmul_rejects_vectors():
    with pytest.raises(ValueError):
        ad.matmul(leaf((3,)), leaf((3, 2)))


def test_transpose_reshape_concat():
    a, b = leaf((2, 3)), leaf((1, 3))
    def build():
        cat = ad.concat([a, b], axis=0)
        return ad.sum_(ad.mul(ad.transpose_last(cat), ad.transpose_last(cat)))
    check(build, {"a": a, "b": b})


def test_getitem_fancy_accumulates_duplicates():
    a = leaf((4, 3))
    idx = (np.array([0, 0, 2]), np.array([1, 1, 0]))
    check(lambda: ad.sum_(ad.mul(a[idx], a[idx])), {"a": a})


def test_broadcast_to_and_mean():
    a = leaf((1, 3))
    check(lambda: ad.mean_(ad.mul(ad.broadcast_to(a, (4, 3)), 2.0)), {"a": a})


def test_sum_axis_keepdims():
    a = leaf((3, 4))
    check(lambda: ad.sum_(ad.mul(ad.sum_(a, axis=1, keepdims=True), a)), {"a": a})


@pytest.mark.parametrize(
    "op",
    [ad.exp, ad.tanh, ad.sigmoid, ad.relu, ad.gelu, ad.softmax],
    ids=lambda f: f.__name__,
)
def test_elementwise_ops(op):
    a = leaf((3, 5), scale=0.8)
    check(lambda: ad.sum_(ad.mul(op(a), op(a))), {"a": a})


def test_log_power_positive_domain():
    a = Tensor(RNG.uniform(0.5, 2.0, size=(4,)), requires_grad=True)
    check(lambda: ad.sum_(ad.add(ad.log(a), ad.power(a, -0.5))), {"a": a})


def test_clip_gradient_masks_outside():
    a = Tensor(np.array([-1.0, 0.5, 2.0]), requires_grad=True)
    out = ad.sum_(ad.clip(a, 0.0, 1.0))
    out.backward()
    np.testing.assert_array_equal(a.grad, [0.0, 1.0, 0.0])


def test_layer_norm_gradcheck():
    x, g, b = leaf((2, 6)), leaf((6,)), leaf((6,))
    check(lambda: ad.sum_(ad.mul(ad.layer_norm(x, g, b), ad.layer_norm(x, g, b))),
          {"x": x, "gamma": g, "beta": b}, tol=1e-5)


def test_log_softmax_rows_sum_and_grad():
    a = leaf((3, 4))
    out = ad.log_softmax(a)
    np.testing.assert_allclose(np.exp(out.data).sum(axis=-1), 1.0, atol=1e-12)
    check(lambda: ad.sum_(ad.mul(ad.log_softmax(a), ad.log_softmax(a))), {"a": a})


def test_grad_accumulates_across_uses():
    a = leaf((3,))
    out = ad.sum_(ad.add(a, a))
    out.backward()
    np.testing.assert_allclose(a.grad, 2.0 * np.ones(3))


def test_backward_requires_scalar():
    a = leaf((3,))
    with pytest.raises(ValueError):
        ad.mul(a, 2.0).backward()


def test_no_grad_suppresses_graph():
    a = leaf((3,))
    with ad.no_grad():
        out = ad.sum_(ad.mul(a, a))
    assert not out.requires_grad
    assert out._vjp is None


def test_dtype_preserved_float32():
    a = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    out = ad.gelu(ad.mul(ad.add(a, 0.5), 2.0))
    assert out.dtype == np.float32
    ad.sum_(out).backward()
    assert a.grad.dtype == np.float32

import numpy as np
import numpy.testing as npt
import pytest

from phr import tensor as T


def f64(x):
    return T.Tensor(np.asarray(x, dtype=np.float64))


def test_sigmoid_symmetry():
    assert T.sigmoid(f64(0.0)).item() == 0.5


def test_relu_definition():
    assert T.relu(f64(-3.0)).item() == 0.0
    assert T.relu(f64(1.5)).item() == 1.5


def test_log_exp_inverse():
    assert abs(T.log(T.exp(f64(2.5))).item() - 2.5) < 1e-6


def test_elementwise_dispatch():
    a = f64([1.0, 2.0])
    b = f64([3.0, 4.0])
    npt.assert_allclose(T.elementwise("add", a, b).numpy(), [4.0, 6.0])
    npt.assert_allclose(T.elementwise("sub", a, b).numpy(), [-2.0, -2.0])
    npt.assert_allclose(T.elementwise("mul", a, 2.0).numpy(), [2.0, 4.0])
    npt.assert_allclose(T.elementwise("max", a, b).numpy(), [3.0, 4.0])
    npt.assert_allclose(T.elementwise("exp", f64(0.0)).numpy(), 1.0)
    with pytest.raises(ValueError):
        T.elementwise("gelu", a)
    with pytest.raises(ValueError):
        T.elementwise("exp", a, b)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError) as exc:
        T.add(f64(np.zeros((2, 3))), f64(np.zeros((3, 2))))
    assert "(2, 3)" in str(exc.value) and "(3, 2)" in str(exc.value)


def test_dtype_mismatch_rejected():
    a = T.Tensor(np.zeros(3, dtype=np.float32))
    b = T.Tensor(np.zeros(3, dtype=np.float64))
    with pytest.raises(ValueError):
        T.add(a, b)


def test_matmul_identity():
    m = f64([[1.0, 2.0], [3.0, 4.0]])
    out = T.matmul(f64(np.eye(2)), m)
    npt.assert_array_equal(out.numpy(), m.numpy())


def test_matmul_hand_expansion():
    out = T.matmul(f64([[1.0, 2.0]]), f64([[3.0], [4.0]]))
    npt.assert_array_equal(out.numpy(), [[11.0]])


def test_matmul_vs_triple_loop_oracle():
    rng = np.random.default_rng(7)
    a = rng.uniform(-2, 2, (4, 5))
    b = rng.uniform(-2, 2, (5, 3))
    want = np.zeros((4, 3))
    for i in range(4):
        for j in range(3):
            for k in range(5):
                want[i, j] += a[i, k] * b[k, j]
    got = T.matmul(f64(a), f64(b)).numpy()
    npt.assert_allclose(got, want, atol=1e-6)


def test_matmul_inner_dim_mismatch():
    with pytest.raises(ValueError):
        T.matmul(f64(np.zeros((2, 3))), f64(np.zeros((4, 2))))


def test_backward_quadratic():
    x = T.Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    with T.Tape():
        y = T.tsum(T.mul(x, x))
        T.backward(y)
    npt.assert_allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_sigmoid_prime_at_zero():
    w = T.Tensor(np.zeros(()), requires_grad=True)
    with T.Tape():
        t = T.mul(T.sigmoid(w), 1.0)
        T.backward(t)
    npt.assert_allclose(w.grad, 0.25)


def test_backward_rejects_nonscalar_root():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with T.Tape():
        y = T.mul(x, x)
        with pytest.raises(ValueError):
            T.backward(y)


def test_backward_accumulates_without_reset():
    x = T.Tensor(np.array([2.0]), requires_grad=True)
    with T.Tape():
        y = T.tsum(T.mul(x, x))
        T.backward(y)
        T.backward(y)
    npt.assert_allclose(x.grad, [8.0])  # 2 * dy/dx


def test_unused_leaf_keeps_zero_grad():
    x = T.Tensor(np.ones(2), requires_grad=True)
    unused = T.Tensor(np.ones(2), requires_grad=True)
    with T.Tape():
        y = T.tsum(T.mul(x, 3.0))
        T.backward(y)
    assert unused.grad is None or not np.any(unused.grad)
    npt.assert_allclose(x.grad, [3.0, 3.0])


def test_composite_graph_vs_finite_differences():
    from phr.gradcheck import check_coordinates

    rng = np.random.default_rng(11)
    x = T.Tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
    w = T.Tensor(rng.uniform(-2, 2, (4, 2)), requires_grad=True)

    def fn():
        h = T.sigmoid(T.matmul(x, w))
        h = T.relu(T.sub(h, 0.3))
        h = T.log(T.add(T.exp(h), 1.0))
        return T.tsum(T.mul(h, h))

    errs = check_coordinates(fn, {"x": x, "w": w}, rng, probes=10)
    assert max(errs.values()) < 1e-4, errs


def test_forward_bitwise_deterministic():
    rng = np.random.default_rng(3)
    a = rng.uniform(-2, 2, (16, 16))
    b = rng.uniform(-2, 2, (16, 16))
    r1 = T.matmul(T.Tensor(a), T.Tensor(b)).numpy()
    r2 = T.matmul(T.Tensor(a.copy()), T.Tensor(b.copy())).numpy()
    assert np.array_equal(r1, r2)


def test_concat_roundtrip_gradient():
    a = T.Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    b = T.Tensor(np.array([[3.0, 4.0], [5.0, 6.0]]), requires_grad=True)
    with T.Tape():
        c = T.concat([a, b], axis=0)
        s = T.tsum(T.mul(c, 2.0))
        T.backward(s)
    npt.assert_allclose(a.grad, [[2.0, 2.0]])
    npt.assert_allclose(b.grad, [[2.0, 2.0], [2.0, 2.0]])


def test_detach_blocks_gradient():
    x = T.Tensor(np.array([1.5]), requires_grad=True)
    with T.Tape():
        y = T.mul(x, 2.0)
        z = T.tsum(T.mul(y.detach(), 3.0))
        T.backward(z)
    assert x.grad is None or not np.any(x.grad)

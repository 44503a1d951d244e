import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gmaslab import diffcore as dc
from gmaslab.diffcore import Adam, Graph, Tensor
from gmaslab.oracles import central_diff, rel_err
from gmaslab.verify import OP_CASES, op_gradient_error


def leaf(v):
    return Tensor(v, requires_grad=True)


# -- forward ops --

def test_add():
    assert np.array_equal(dc.add([1.0, 2.0], [3.0, 4.0]).data, [4.0, 6.0])


def test_tanh_origin():
    assert dc.tanh([0.0]).data[0] == 0.0


def test_linf_norm():
    assert dc.linf_norm([0.5, -2.0, 1.0]).item() == 2.0


def test_forward_op_dispatch():
    assert np.array_equal(dc.forward_op("mul", [2.0, 3.0], [4.0, 5.0]).data, [8.0, 15.0])
    assert dc.forward_op("concat", [[1.0], [2.0, 3.0]]).shape == (3,)
    with pytest.raises(ValueError):
        dc.forward_op("conv2d", [1.0])


@pytest.mark.parametrize("kind,args", [
    ("add", ([1.0, 2.0], [1.0, 2.0, 3.0])),
    ("matmul", (np.ones((2, 3)), np.ones((2, 3)))),
    ("affine", (np.ones(3), np.ones((3, 2)), np.ones(3))),
    ("dot", (np.ones(3), np.ones(4))),
])
def test_shape_mismatch_names_op(kind, args):
    with pytest.raises(dc.ShapeError, match=kind):
        dc.forward_op(kind, *args)


def test_ops_without_graph_are_constants():
    x = leaf([1.0, 2.0])
    y = dc.tanh(x)
    assert y.graph is None and y.node is None


def test_graph_is_topological():
    x = leaf(np.ones(3))
    with Graph() as g:
        y = dc.sum_(dc.tanh(dc.mul(x, x)))
        dc.gradient_as_graph(y, x)
    for nid, node in enumerate(g.nodes):
        assert all(i is None or i < nid for i in node.input_ids)


# -- first order --

def test_grad_square():
    x = leaf(3.0)
    with Graph():
        assert dc.gradient(x * x, x).item() == 6.0


def test_grad_tanh_origin():
    x = leaf(0.0)
    with Graph():
        assert dc.gradient(dc.tanh(x), x).item() == 1.0


def test_non_scalar_rejected():
    x = leaf([1.0, 2.0])
    with Graph(), pytest.raises(dc.ShapeError):
        dc.gradient(dc.tanh(x), x)


def test_unreachable_leaf_gets_zeros():
    x, z = leaf([1.0, 2.0]), leaf(np.ones((2, 2)))
    with Graph():
        gx, gz = dc.gradient(dc.sum_(dc.square(x)), [x, z])
    assert np.array_equal(gx.data, [2.0, 4.0])
    assert np.array_equal(gz.data, np.zeros((2, 2)))


def test_abs_and_max_use_zero_subgradient_at_kink():
    x = leaf([0.0, 0.5])
    with Graph():
        assert np.array_equal(dc.gradient(dc.sum_(dc.abs_(x)), x).data, [0.0, 1.0])
        assert np.array_equal(dc.gradient(dc.sum_(dc.max_with_scalar(x, 0.5)), x).data, [0.0, 0.0])


def test_l2norm_gradient_at_origin_is_zero():
    x = leaf(np.zeros(3))
    with Graph():
        assert np.array_equal(dc.gradient(dc.l2norm(x), x).data, np.zeros(3))


@pytest.mark.parametrize("kind", sorted(OP_CASES))
def test_op_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    assert max(op_gradient_error(kind, rng) for _ in range(20)) < 1e-4


def test_two_layer_tanh_network_input_gradient():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        w1, b1 = rng.normal(size=(4, 6)), rng.normal(size=6)
        w2, b2 = rng.normal(size=(6, 1)), rng.normal(size=1)

        def f(x):
            return dc.sum_(dc.affine(dc.tanh(dc.affine(x, w1, b1)), w2, b2))

        x0 = rng.uniform(-2, 2, 4)
        x = leaf(x0)
        with Graph():
            g = dc.gradient(f(x), x)
        worst = max(worst, rel_err(g.data, central_diff(lambda v: f(Tensor(v)).item(), x0)))
    assert worst < 1e-4


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(-2, 2)),
       st.floats(-3, 3), st.floats(-3, 3))
def test_gradient_is_linear(x0, a, b):
    x = leaf(x0)
    with Graph():
        f = dc.sum_(dc.tanh(x))
        g = dc.sum_(dc.square(x))
        combo = dc.gradient(dc.add(dc.scale(f, a), dc.scale(g, b)), x).data
        parts = a * dc.gradient(f, x).data + b * dc.gradient(g, x).data
    np.testing.assert_allclose(combo, parts, rtol=1e-12, atol=1e-12)


# -- second order --

def test_second_derivative_of_cube():
    x = leaf(2.0)
    with Graph():
        d1 = dc.gradient_as_graph(x * x * x, x)
        assert d1.item() == 12.0
        assert dc.gradient(d1, x).item() == 12.0


def test_linear_map_has_constant_gradient():
    rng = np.random.default_rng(1)
    w = Tensor(rng.normal(size=(3, 2)))
    c = Tensor(rng.normal(size=2))
    x = leaf(rng.normal(size=3))
    with Graph():
        slope = dc.gradient_as_graph(dc.dot(dc.matmul(x, w), c), x)
        hess_row = dc.gradient(dc.sum_(slope), x)
    assert np.array_equal(hess_row.data, np.zeros(3))


def test_second_order_through_parameters():
    """d/dtheta ||dQ/dx - c||^2 for a tanh MLP, against differences over theta."""
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        w1, b1, w2 = (leaf(rng.normal(size=(3, 5))), leaf(rng.normal(size=5)),
                      leaf(rng.normal(size=(5, 1))))
        x0, c = rng.uniform(-1, 1, 3), rng.normal(size=3)

        def loss():
            x = leaf(x0)
            q = dc.sum_(dc.matmul(dc.reshape(dc.tanh(dc.affine(x, w1, b1)), (1, 5)), w2))
            slope = dc.gradient_as_graph(q, x)
            return dc.sum_(dc.square(dc.sub(slope, c)))

        with Graph():
            grads = dc.gradient(loss(), [w1, b1, w2])
        for p, g in zip((w1, b1, w2), grads):
            saved = p.data.copy()

            def f(v, p=p):
                p.data = v
                with Graph():
                    return loss().item()

            fd = central_diff(f, saved)
            p.data = saved
            worst = max(worst, rel_err(g.data, fd))
    assert worst < 1e-3


def test_custom_op_without_second_order_rejected():
    x = leaf(1.5)

    def relu_like(t):
        return dc.apply_op("step_relu", (t,), np.maximum(t.data, 0.0),
                           lambda g, t, out: (g,), second_order=False)

    with Graph():
        y = relu_like(x)
        assert dc.gradient(y, x).item() == 1.0
        with pytest.raises(dc.DifferentiationError, match="step_relu"):
            dc.gradient_as_graph(y, x)


def test_graph_replay_is_deterministic():
    def run():
        rng = np.random.default_rng(5)
        w = leaf(rng.normal(size=(4, 3)))
        x = leaf(rng.normal(size=4))
        with Graph():
            y = dc.sum_(dc.tanh(dc.matmul(x, w)))
            s = dc.gradient_as_graph(y, x)
            return y.data.tobytes(), dc.gradient(dc.l2norm(s), w).data.tobytes()
    assert run() == run()


# -- jacobians --

def test_jacobian_identity():
    x = leaf([0.3, -0.7])
    with Graph():
        assert np.array_equal(dc.jacobian(dc.scale(x, 1.0), x).data, np.eye(2))


def test_jacobian_diag():
    x = leaf([0.3, -0.7])
    with Graph():
        y = dc.mul(x, Tensor([2.0, 3.0]))
        assert np.array_equal(dc.jacobian(y, x).data, np.diag([2.0, 3.0]))


def test_jacobian_of_tanh_mlp_matches_differences():
    rng = np.random.default_rng(3)
    for _ in range(20):
        w1, b1 = rng.normal(size=(3, 7)), rng.normal(size=7)
        w2, b2 = rng.normal(size=(7, 2)), rng.normal(size=2)

        def f(x):
            return dc.affine(dc.tanh(dc.affine(x, w1, b1)), w2, b2)

        x0 = rng.uniform(-2, 2, 3)
        x = leaf(x0)
        with Graph():
            jac = dc.jacobian(f(x), x).data
        fd = np.stack([central_diff(lambda v, i=i: f(Tensor(v)).data[i], x0) for i in range(2)])
        assert rel_err(jac, fd) < 1e-4


def test_batch_jacobian_matches_per_row():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(3, 3))
    xb = rng.normal(size=(5, 3))
    x = leaf(xb)
    with Graph():
        jb = dc.batch_jacobian(dc.tanh(dc.matmul(x, w)), x).data
    for i in range(5):
        xi = leaf(xb[i])
        with Graph():
            ji = dc.jacobian(dc.tanh(dc.matmul(xi, w)), xi).data
        np.testing.assert_allclose(jb[i], ji, rtol=1e-14)


# -- optimiser --

def test_adam_zero_gradient_leaves_params():
    p = leaf([1.0, -2.0])
    Adam([p]).step([np.zeros(2)])
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_magnitude_is_lr():
    p = leaf(0.0)
    Adam([p], lr=1e-3).step([np.array(1.0)])
    assert p.item() == pytest.approx(-1e-3, rel=1e-6)


def test_adam_converges_on_quadratic():
    w = leaf(0.0)
    opt = Adam([w], lr=1e-2)
    for _ in range(1000):
        with Graph():
            opt.step(dc.gradient(dc.square(dc.sub(w, 3.0)), [w]))
    assert abs(w.item() - 3.0) < 1e-2


def test_adam_rejects_nan():
    p = leaf([1.0])
    opt = Adam([p])
    with pytest.raises(dc.DivergenceError):
        opt.step([np.array([np.nan])])
    assert p.item() == 1.0 and opt.t == 0


def test_checkpoint_roundtrip(tmp_path):
    params = {"encoder.l1.w": np.arange(6.0).reshape(2, 3), "q.l1.b": np.array([0.5]),
              "scalar": np.array(2.0)}
    path = tmp_path / "p.ckpt"
    dc.save_checkpoint(path, params)
    raw = path.read_bytes()
    assert raw[:8] == b"GMASCKPT" and int.from_bytes(raw[8:12], "little") == 1
    back = dc.load_checkpoint(path)
    assert list(back) == list(params)
    for k in params:
        assert np.array_equal(back[k], params[k]) and back[k].shape == params[k].shape


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x"
    path.write_bytes(b"NOTACKPT\x01\x00\x00\x00")
    with pytest.raises(ValueError):
        dc.load_checkpoint(path)

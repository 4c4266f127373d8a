import math

import numpy as np
import pytest

from cephalo3d import gradcheck
from cephalo3d.errors import InvalidArgumentError, ShapeError, StateError, TrainingDivergedError
from cephalo3d.nn import checkpoint
from cephalo3d.nn.functional import (
    conv3d_backward,
    conv3d_forward,
    cross_entropy,
    dense_backward,
    dense_forward,
    dropout_forward,
    maxout_backward,
    maxout_forward,
    maxpool_backward,
    maxpool_forward,
    softmax,
    softmax_cross_entropy,
)
from cephalo3d.nn.layers import ConvBlock, Dense, Dropout, Param, SoftmaxHeads
from cephalo3d.nn.optim import Adadelta, adadelta_step

from conftest import central_diff, max_rel_err


def naive_conv(x, w, b):
    """Six nested loops over output position and kernel tap, zero padding."""
    cout, cin, kx, ky, kz = w.shape
    _, nx, ny, nz = x.shape
    out = np.zeros((cout, nx, ny, nz))
    for o in range(cout):
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    acc = b[o]
                    for a in range(kx):
                        for bb in range(ky):
                            for c in range(kz):
                                xi, yj, zk = i + a - kx // 2, j + bb - ky // 2, k + c - kz // 2
                                if 0 <= xi < nx and 0 <= yj < ny and 0 <= zk < nz:
                                    acc += np.dot(w[o, :, a, bb, c], x[:, xi, yj, zk])
                    out[o, i, j, k] = acc
    return out


@pytest.mark.parametrize("ksize", [(1, 3, 3), (3, 1, 3), (3, 3, 1), (3, 3, 3), (1, 1, 1)])
def test_conv_matches_loop_oracle(ksize, rng):
    x = rng.normal(size=(3, 5, 4, 6))
    w = rng.normal(size=(2, 3) + ksize)
    b = rng.normal(size=2)
    out, _ = conv3d_forward(x, w, b)
    assert out.shape == (2, 5, 4, 6)
    assert np.max(np.abs(out - naive_conv(x, w, b))) < 1e-12


def test_conv_shape_contract():
    x = np.zeros((4, 8, 8, 8))
    with pytest.raises(ShapeError):
        conv3d_forward(x, np.zeros((2, 3, 1, 3, 3)))
    with pytest.raises(ShapeError):
        conv3d_forward(x, np.zeros((2, 4, 2, 3, 3)))


def test_conv_delta_kernel_is_identity(rng):
    x = rng.normal(size=(1, 4, 5, 6))
    w = np.zeros((1, 1, 3, 3, 3))
    w[0, 0, 1, 1, 1] = 1.0
    out, _ = conv3d_forward(x, w)
    assert np.array_equal(out, x)


@pytest.mark.parametrize("trial", range(20))
def test_conv_gradients_fd(trial):
    rng = np.random.default_rng(100 + trial)
    cin, cout = rng.integers(1, 4, size=2)
    dims = tuple(rng.integers(2, 6, size=3))
    ksize = [(1, 3, 3), (3, 1, 3), (3, 3, 1)][trial % 3]
    x = rng.normal(size=(cin,) + dims)
    w = rng.normal(size=(cout, cin) + ksize)
    b = rng.normal(size=cout)
    up = rng.normal(size=(cout,) + dims)
    out, cache = conv3d_forward(x, w, b)
    dx, dw, db = conv3d_backward(up, cache)

    def f():
        return float(np.sum(up * conv3d_forward(x, w, b)[0]))

    assert max_rel_err(dx, central_diff(f, x)) < 1e-6
    assert max_rel_err(dw, central_diff(f, w)) < 1e-6
    assert max_rel_err(db, central_diff(f, b)) < 1e-6


def test_maxout_example_and_gradient_routing():
    x = np.array([1.0, 5.0, 3.0, 2.0]).reshape(4, 1, 1, 1)
    out, cache = maxout_forward(x, 2)
    assert out.ravel().tolist() == [5.0, 3.0]
    d = maxout_backward(np.array([10.0, 20.0]).reshape(2, 1, 1, 1), cache)
    assert d.ravel().tolist() == [0.0, 10.0, 20.0, 0.0]
    with pytest.raises(ShapeError):
        maxout_forward(np.zeros((3, 2, 2, 2)), 2)


def test_maxout_equals_pairwise_maximum(rng):
    x = rng.normal(size=(6, 3, 4, 5))
    out, _ = maxout_forward(x, 2)
    assert np.array_equal(out, np.maximum(x[0::2], x[1::2]))


def test_maxpool_matches_loop_oracle(rng):
    x = rng.normal(size=(2, 5, 4, 7))
    out, cache = maxpool_forward(x)
    assert out.shape == (2, 2, 2, 3)
    for c in range(2):
        for i in range(2):
            for j in range(2):
                for k in range(3):
                    win = x[c, 2 * i:2 * i + 2, 2 * j:2 * j + 2, 2 * k:2 * k + 2]
                    assert out[c, i, j, k] == win.max()
    d = maxpool_backward(np.ones_like(out), cache)
    assert d.sum() == out.size
    assert np.all(d[:, 4] == 0) and np.all(d[:, :, :, 6] == 0)
    assert np.all(np.isin(x[d == 1], out))


def test_maxpool_rejects_tiny_dims():
    with pytest.raises(ShapeError):
        maxpool_forward(np.zeros((1, 1, 4, 4)))


def test_dense_gradients(rng):
    x = rng.normal(size=7)
    w = rng.normal(size=(4, 7))
    b = rng.normal(size=4)
    up = rng.normal(size=4)
    out, cache = dense_forward(x, w, b)
    assert np.allclose(out, w @ x + b)
    dx, dw, db = dense_backward(up, cache)

    def f():
        return float(up @ dense_forward(x, w, b)[0])

    assert max_rel_err(dx, central_diff(f, x)) < 1e-7
    assert max_rel_err(dw, central_diff(f, w)) < 1e-7
    assert np.array_equal(db, up)


def test_softmax_examples():
    assert np.allclose(softmax(np.zeros(4)), 0.25)
    p = softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(p)) and p[0] == 1.0
    assert math.isclose(cross_entropy([1.0, 0.0], [1.0, 0.0]), 0.0, abs_tol=1e-15)
    assert math.isclose(cross_entropy([0.0, 1.0], [1.0, 0.0]), -math.log(1e-12))


def test_softmax_cross_entropy_gradient(rng):
    z = rng.normal(size=9)
    t = rng.random(9)
    t /= t.sum()
    loss, g, p = softmax_cross_entropy(z, t)
    assert np.allclose(g, p - t)
    fd = central_diff(lambda: softmax_cross_entropy(z, t)[0], z, h=1e-5)
    assert max_rel_err(g, fd) < 1e-6
    # bounded below by the target entropy
    assert loss >= -np.sum(t * np.log(t)) - 1e-12


def test_softmax_heads_split_and_loss(rng):
    heads = SoftmaxHeads([3, 5, 2])
    z = rng.normal(size=10)
    ts = [np.eye(3)[1], np.full(5, 0.2), np.array([0.5, 0.5])]
    loss, dz, probs = heads.loss(z, ts)
    expected = sum(softmax_cross_entropy(seg, t)[0] for seg, t in zip((z[:3], z[3:8], z[8:]), ts))
    assert math.isclose(loss, expected, rel_tol=1e-12)
    assert [len(p) for p in probs] == [3, 5, 2]
    with pytest.raises(ShapeError):
        heads.loss(z[:9], ts)


def test_dropout_contract(rng):
    x = np.ones(1_000_000, dtype=np.float32)
    out, mask = dropout_forward(x, 0.5, True, rng)
    assert abs(out.mean() - 1.0) < 0.01
    assert set(np.unique(out).tolist()) <= {0.0, 2.0}
    assert dropout_forward(x, 0.5, False, rng)[0] is x
    assert dropout_forward(x, 0.0, True, rng)[0] is x
    with pytest.raises(InvalidArgumentError):
        dropout_forward(x, 1.0, True, rng)


def test_dropout_layer_reuses_mask(rng):
    d = Dropout(0.3)
    d.rng = rng
    x = rng.normal(size=50)
    out = d.forward(x, training=True)
    back = d.backward(np.ones(50))
    assert np.array_equal(out == 0, back == 0)


def test_backward_before_forward_is_state_error(rng):
    layer = Dense("d", 3, 2, rng)
    with pytest.raises(StateError):
        layer.backward(np.ones(2))


def test_conv_block_shapes_and_params(rng):
    block = ConvBlock("b0", 1, 4, rng, dtype=np.float64)
    out = block.forward(rng.normal(size=(1, 8, 6, 10)))
    assert out.shape == (4, 4, 3, 5)
    shapes = [p.shape for p in block.parameters()]
    assert shapes[0] == (8, 1, 1, 3, 3) and shapes[2] == (8, 8, 3, 1, 3) and shapes[4] == (8, 8, 3, 3, 1)


def test_conv_block_gradient_fd():
    rng = np.random.default_rng(7)
    block = ConvBlock("b", 2, 2, rng, dtype=np.float64)
    x = rng.normal(size=(2, 4, 4, 4))
    up = rng.normal(size=(2, 2, 2, 2))
    block.forward(x)
    dx = block.backward(up)
    w = block.convs[1].weight

    def f():
        return float(np.sum(up * block.forward(x)))

    assert max_rel_err(dx, central_diff(f, x, h=1e-6), floor=1e-4) < 1e-4
    for p in block.parameters():
        p.zero_grad()
    block.forward(x)
    block.backward(up)
    assert max_rel_err(w.grad, central_diff(f, w.value, h=1e-6), floor=1e-4) < 1e-4


def test_gradcheck_suite_passes():
    results = gradcheck.run_all(trials=20, seed=0)
    assert {r.layer for r in results} >= {"staged_conv", "maxout", "maxpool", "dense", "softmax_cross_entropy", "dropout"}
    for r in results:
        assert r.trials >= 20 and r.passed, r


def test_adadelta_scalar_example():
    # hand derivation: E[g^2] = 0.05; dx = -sqrt(1e-6) / sqrt(0.05 + 1e-6) * 1
    expected = -math.sqrt(1e-6 / 0.050001)
    _, eg2, edx2, delta = adadelta_step(np.array(0.0), np.array(1.0), np.array(0.0), np.array(0.0))
    assert f"{float(delta):.6g}" == f"{expected:.6g}" == "-0.00447209"
    assert math.isclose(float(eg2), 0.05)
    assert math.isclose(float(edx2), 0.05 * expected ** 2)


def test_adadelta_opposes_gradient_and_zero_grad_is_noop(rng):
    g = rng.normal(size=20)
    _, _, _, d = adadelta_step(np.zeros(20), g, np.zeros(20), np.zeros(20))
    assert np.all(np.sign(d) == -np.sign(g))
    p0 = rng.normal(size=5)
    p1, _, _, _ = adadelta_step(p0, np.zeros(5), np.zeros(5), np.zeros(5))
    assert np.array_equal(p0, p1)


def test_adadelta_class_matches_pure_step(rng):
    p = Param("w", rng.normal(size=6))
    opt = Adadelta([p])
    value, eg2, edx2 = p.value.copy(), np.zeros(6), np.zeros(6)
    for _ in range(5):
        g = rng.normal(size=6)
        p.grad[...] = g
        opt.step()
        value, eg2, edx2, _ = adadelta_step(value, g, eg2, edx2)
    assert np.allclose(p.value, value, rtol=1e-12)


def test_adadelta_learning_rate_scales_applied_step_only(rng):
    p, q = Param("w", np.zeros(4)), Param("w", np.zeros(4))
    full, scaled = Adadelta([p]), Adadelta([q], learning_rate=0.1)
    for _ in range(3):
        g = rng.normal(size=4)
        p.grad[...] = g
        q.grad[...] = g
        before_p, before_q = p.value.copy(), q.value.copy()
        full.step()
        scaled.step()
        assert np.allclose(q.value - before_q, 0.1 * (p.value - before_p), rtol=1e-12)
    # the accumulators follow the unscaled rule
    assert np.array_equal(full.state.edx2["w"], scaled.state.edx2["w"])


def test_adadelta_clip_norm_rescales_global_gradient():
    a, b = Param("a", np.zeros(1)), Param("b", np.zeros(1))
    opt = Adadelta([a, b], clip_norm=1.0)
    a.grad[:] = 3.0
    b.grad[:] = 4.0  # global norm 5, so the clipped gradient is (0.6, 0.8)
    opt.step()
    assert opt.state.eg2["a"][0] == pytest.approx(0.05 * 0.36, rel=1e-12)
    assert opt.state.eg2["b"][0] == pytest.approx(0.05 * 0.64, rel=1e-12)
    with pytest.raises(ValueError):
        Adadelta([a], clip_norm=0.0)
    with pytest.raises(ValueError):
        Adadelta([a], learning_rate=-1.0)


def test_adadelta_rejects_non_finite(rng):
    a, b = Param("a", np.ones(3)), Param("b", np.ones(3))
    opt = Adadelta([a, b])
    a.grad[:] = 1.0
    b.grad[1] = np.nan
    with pytest.raises(TrainingDivergedError, match="'b'"):
        opt.step()
    assert np.array_equal(a.value, np.ones(3))


def test_checkpoint_round_trip(tmp_path, rng):
    params = [Param("conv.w", rng.normal(size=(2, 1, 1, 3, 3)).astype(np.float32)),
              Param("dense.b", rng.normal(size=5).astype(np.float32))]
    opt = Adadelta(params)
    for p in params:
        p.grad[...] = 1.0
    opt.step()
    checkpoint.save(tmp_path / "m.cw3d", params, opt)
    raw = (tmp_path / "m.cw3d").read_bytes()
    assert raw[:8] == b"CW3D0001"

    fresh = [Param(p.name, np.zeros_like(p.value)) for p in params]
    opt2 = Adadelta(fresh)
    checkpoint.load(tmp_path / "m.cw3d", fresh, opt2)
    for a, b in zip(params, fresh):
        assert np.array_equal(a.value, b.value)
        assert np.array_equal(opt.state.eg2[a.name], opt2.state.eg2[b.name])
    checkpoint.save(tmp_path / "again.cw3d", fresh, opt2)
    assert (tmp_path / "again.cw3d").read_bytes() == raw


def test_checkpoint_layout_by_hand():
    buf = checkpoint.dumps({"w": np.array([[1.0, 2.0]], dtype=np.float32)})
    expected = (b"CW3D0001" + (1).to_bytes(4, "little") + (1).to_bytes(4, "little") + b"w"
                + (2).to_bytes(4, "little") + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
                + np.array([1.0, 2.0], dtype="<f4").tobytes())
    assert buf == expected
    assert np.array_equal(checkpoint.loads(buf)["w"], [[1.0, 2.0]])

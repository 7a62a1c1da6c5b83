import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vigan import diffcore as dc
from vigan.diffcore import Adam, Tensor, backward, sgd_step

from gradcheck import check, op_cases, relative_error, numeric_grad


def test_relu_values():
    assert np.array_equal(dc.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_sigmoid_at_zero():
    assert dc.sigmoid(Tensor(0.0)).item() == 0.5


def test_sigmoid_saturates_without_overflow():
    y = dc.sigmoid(Tensor([-800.0, 800.0])).data
    assert np.all(np.isfinite(y)) and y[0] == 0.0 and y[1] == 1.0


def test_conv2d_ones():
    out = dc.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))), stride=2)
    assert out.shape == (1, 1, 2, 2)
    assert np.all(out.data == 4.0)


def test_conv2d_matches_direct_loops():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 4, 4))
    out = dc.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(4):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    ref[n, o, i, j] = np.sum(xp[n, :, 2 * i:2 * i + 4, 2 * j:2 * j + 4] * w[o])
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_shape_errors_name_op_and_shapes():
    with pytest.raises(dc.ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        dc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(dc.ShapeError, match="add"):
        dc.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(dc.ShapeError, match="conv2d"):
        dc.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 2, 2))))


def test_log_rejects_non_positive():
    with pytest.raises(ValueError, match="non-positive"):
        dc.log(Tensor([1.0, 0.0]))


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(dc.ShapeError):
        backward(dc.mul(x, 2.0))


def test_grad_of_sum_is_ones():
    x = Tensor([0.3, -1.0, 2.0], requires_grad=True)
    backward(dc.sum(x))
    assert np.array_equal(x.grad, [1.0, 1.0, 1.0])


def test_grad_of_sum_of_squares():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(dc.sum(x * x))
    assert np.array_equal(x.grad, [2.0, 4.0])


@pytest.mark.parametrize("name,make,build", op_cases(), ids=[c[0] for c in op_cases()])
def test_op_gradients_match_finite_differences(name, make, build):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(6):
        assert check(build, make(rng)) <= 1e-6


def _mlp_loss(x, w1, b1, w2, b2):
    h = dc.relu(dc.add(dc.matmul(x, w1), b1))
    y = dc.add(dc.matmul(h, w2), b2)
    return dc.mean(dc.mul(y, y))


def test_two_layer_mlp_gradient():
    rng = np.random.default_rng(0)
    arrays = [rng.normal(size=(5, 3)), rng.normal(size=(3, 8)), rng.normal(size=(8,)),
              rng.normal(size=(8, 2)), rng.normal(size=(2,))]
    assert check(_mlp_loss, arrays) <= 1e-6


def test_gradient_accumulates_over_two_uses():
    rng = np.random.default_rng(1)
    xv = rng.normal(size=4)
    a, b = rng.normal(size=4), rng.normal(size=4)

    x = Tensor(xv, requires_grad=True)
    backward(dc.add(dc.sum(dc.mul(x, a)), dc.sum(dc.tanh(dc.mul(x, b)))))
    both = x.grad

    x1 = Tensor(xv, requires_grad=True)
    backward(dc.sum(dc.mul(x1, a)))
    x2 = Tensor(xv, requires_grad=True)
    backward(dc.sum(dc.tanh(dc.mul(x2, b))))
    np.testing.assert_allclose(both, x1.grad + x2.grad, rtol=0, atol=1e-15)


def test_grad_accumulates_across_backward_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(dc.sum(x))
    backward(dc.sum(x))
    assert np.array_equal(x.grad, [2.0, 2.0])


def test_tape_is_topologically_ordered_and_visited_once():
    x = Tensor(np.ones(3), requires_grad=True)
    h = dc.tanh(x)
    loss = dc.sum(dc.add(dc.mul(h, h), h))
    tape = dc.Tape.from_output(loss)
    seqs = [n.seq for n in tape.nodes]
    assert seqs == sorted(seqs)
    position = {id(n.output): i for i, n in enumerate(tape.nodes)}
    for i, node in enumerate(tape.nodes):
        for inp in node.inputs:
            if inp.node is not None:
                assert position[id(inp)] < i
    visited = []
    tape.backward(loss, np.ones(()), visit=visited.append)
    assert len(visited) == len(tape) == len({id(n) for n in visited})
    assert [n.seq for n in visited] == sorted(seqs, reverse=True)


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(42)
        arrays = [rng.normal(size=(5, 3)), rng.normal(size=(3, 8)), rng.normal(size=(8,)),
                  rng.normal(size=(8, 2)), rng.normal(size=(2,))]
        ts = [Tensor(a, requires_grad=True) for a in arrays]
        loss = _mlp_loss(*ts)
        backward(loss)
        return loss.data.tobytes() + b"".join(t.grad.tobytes() for t in ts)

    assert run() == run()


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with dc.no_grad():
        y = dc.exp(x)
    assert y.node is None and not y.requires_grad


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_forward_backward_stay_finite(values):
    x = Tensor(np.array(values), requires_grad=True)
    y = dc.sum(dc.add(dc.sigmoid(x), dc.tanh(dc.mul(x, 0.1))))
    backward(y)
    assert np.isfinite(y.data).all() and np.isfinite(x.grad).all()


def test_sgd_step_arithmetic():
    p = Tensor([1.0], requires_grad=True)
    p.grad = np.array([2.0])
    sgd_step([p], 0.1)
    assert p.data[0] == pytest.approx(0.8, abs=1e-15)
    assert p.grad is None


def test_sgd_zero_lr_leaves_params():
    p = Tensor([1.5, -2.0], requires_grad=True)
    p.grad = np.array([3.0, 4.0])
    sgd_step([p], 0.0)
    assert np.array_equal(p.data, [1.5, -2.0])


def test_sgd_missing_grad_errors():
    with pytest.raises(ValueError, match="no gradient"):
        sgd_step([Tensor([1.0], requires_grad=True)], 0.1)


def test_adam_first_step_magnitude_is_lr():
    # m̂ = g and v̂ = g² after bias correction, so the step is lr·g/(|g|+eps)
    for g in (0.37, -5.0, 1e-3):
        p = Tensor([0.0], requires_grad=True)
        p.grad = np.array([g])
        opt = Adam([p], lr=0.01)
        opt.step()
        expected = -0.01 * g / (abs(g) + 1e-8)
        assert p.data[0] == pytest.approx(expected, rel=1e-12)
        assert np.sign(p.data[0]) == -np.sign(g)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    params = {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=(4,)), "s": np.array(3.5),
              "ünï": rng.normal(size=(2, 1, 2))}
    path = tmp_path / "p.vgnp"
    dc.save_params(path, params)
    loaded = dc.load_params(path)
    assert list(loaded) == list(params)
    for k in params:
        assert loaded[k].shape == params[k].shape
        assert loaded[k].tobytes() == params[k].tobytes()
    assert dc.dumps_params(loaded) == path.read_bytes()


def test_checkpoint_layout():
    blob = dc.dumps_params({"ab": np.array([[1.0, 2.0]])})
    assert blob[:4] == b"VGNP"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:12], "little") == 1
    # name_len + name + rank + 2 dims + 2 doubles
    assert len(blob) == 12 + 4 + 2 + 4 + 16 + 16


def test_checkpoint_corruption():
    blob = dc.dumps_params({"a": np.ones(3)})
    with pytest.raises(dc.CheckpointError, match="truncated"):
        dc.loads_params(blob[:-1])
    with pytest.raises(dc.CheckpointError, match="magic"):
        dc.loads_params(b"XXXX" + blob[4:])

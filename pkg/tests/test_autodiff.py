import numpy as np
import pytest

from res2lab.autodiff import Tape, grad_check, ops, relative_error
from res2lab.errors import NotScalarLoss, ValidationError
from res2lab.res2net import Bound, Res2NetBlockConfig, block_forward
from res2lab.analysis import positive_block_params

from blockcheck import block_grad_check


def test_sum_gradient_is_ones(rng):
    tape = Tape()
    x = tape.leaf(rng.standard_normal((2, 3, 4, 4)))
    g = tape.backward(ops.sum(x))
    assert np.array_equal(g[x], np.ones(x.shape))


def test_relu_negative_gradient_is_zero(rng):
    tape = Tape()
    x = tape.leaf(-rng.uniform(0.1, 1, (2, 3, 4, 4)))
    assert not tape.backward(ops.sum(ops.relu(x)))[x].any()


def test_relu_gradient_at_zero_is_zero():
    tape = Tape()
    x = tape.leaf(np.zeros((1, 1, 2, 2)))
    assert not tape.backward(ops.sum(ops.relu(x)))[x].any()


def test_unreached_slot_gets_zeros(rng):
    tape = Tape()
    x, unused = tape.leaf(rng.standard_normal(3)), tape.leaf(np.ones((2, 2)))
    g = tape.backward(ops.sum(x))
    assert np.array_equal(g[unused], np.zeros((2, 2)))


def test_non_scalar_loss():
    tape = Tape()
    x = tape.leaf(np.ones((1, 2, 2, 2)))
    with pytest.raises(NotScalarLoss):
        tape.backward(ops.relu(x))


def test_backward_runs_in_reverse_record_order(rng):
    tape = Tape()
    x = tape.leaf(rng.standard_normal((1, 2, 3, 3)))
    y = ops.relu(x)
    ops.add(y, y)
    seen = []
    for rec in tape.records:
        fn = rec.backward
        rec.backward = lambda g, fn=fn, op=rec.op: (seen.append(op), fn(g))[1]
    tape.backward(ops.sum(tape.vars[-1]))
    assert seen == ["add", "relu"]  # the sum record was added after wrapping


def test_cross_tape_input_rejected():
    a, b = Tape(), Tape()
    with pytest.raises(ValidationError):
        ops.add(a.leaf(np.ones(2)), b.leaf(np.ones(2)))


def test_relative_error_definition():
    assert relative_error(1.0, 1.0) == 0
    assert relative_error(2.0, 1.0) == 0.5
    assert relative_error(0.0, 1e-12) == pytest.approx(1e-4)


# --- transpose consistency --------------------------------------------------------

def _rand(rng, *shape):
    return rng.standard_normal(shape)


OPS = {
    "conv2d": (lambda r: [_rand(r, 2, 4, 5, 5), _rand(r, 6, 2, 3, 3)],
               lambda x, w: ops.conv2d(x, w, 2, 1, 2)),
    "conv2d_1x1": (lambda r: [_rand(r, 2, 4, 5, 5), _rand(r, 3, 4, 1, 1)],
                   lambda x, w: ops.conv2d(x, w, 2, 0)),
    "batch_norm_train": (lambda r: [_rand(r, 3, 2, 3, 3), r.uniform(.5, 1.5, 2), _rand(r, 2)],
                         lambda x, g, b: ops.batch_norm(x, g, b, np.zeros(2), np.ones(2), True)),
    "batch_norm_eval": (lambda r: [_rand(r, 3, 2, 3, 3), r.uniform(.5, 1.5, 2), _rand(r, 2)],
                        lambda x, g, b: ops.batch_norm(x, g, b, np.ones(2), np.full(2, 2.0), False)),
    "relu": (lambda r: [_rand(r, 2, 3, 4, 4)], ops.relu),
    "sigmoid": (lambda r: [_rand(r, 2, 3, 4, 4)], ops.sigmoid),
    "global_avg_pool": (lambda r: [_rand(r, 2, 3, 4, 5)], ops.global_avg_pool),
    "avg_pool2d": (lambda r: [_rand(r, 2, 3, 6, 5)], lambda x: ops.avg_pool2d(x, 3, 2, 1)),
    "max_pool2d": (lambda r: [_rand(r, 2, 3, 6, 5)], lambda x: ops.max_pool2d(x, 3, 2, 1)),
    "linear": (lambda r: [_rand(r, 3, 4, 1, 1), _rand(r, 5, 4), _rand(r, 5)], ops.linear),
    "add": (lambda r: [_rand(r, 2, 3, 3, 3), _rand(r, 2, 3, 3, 3)], ops.add),
    "scale_channels": (lambda r: [_rand(r, 2, 3, 4, 4), _rand(r, 2, 3)], ops.scale_channels),
    "concat_channels": (lambda r: [_rand(r, 2, 1, 3, 3), _rand(r, 2, 2, 3, 3)],
                        lambda a, b: ops.concat_channels([a, b])),
    "flatten": (lambda r: [_rand(r, 2, 3, 2, 2)], ops.flatten),
    "softmax_cross_entropy": (lambda r: [_rand(r, 4, 5)],
                              lambda z: ops.softmax_cross_entropy(z, np.array([0, 3, 4, 1]))),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_transpose_consistency(name):
    make, fn = OPS[name]
    rng = np.random.default_rng(7)
    xs = make(rng)
    vs = [rng.standard_normal(x.shape) for x in xs]

    def run(arrays):
        tape = Tape()
        leaves = [tape.leaf(a) for a in arrays]
        return tape, leaves, fn(*leaves)

    tape, leaves, out = run(xs)
    g = rng.standard_normal(out.shape)
    grads = tape.backward(ops.weighted_sum(out, g))
    jt = sum(float((grads[l] * v).sum()) for l, v in zip(leaves, vs))
    h = 1e-6
    plus = run([x + h * v for x, v in zip(xs, vs)])[2].value
    minus = run([x - h * v for x, v in zip(xs, vs)])[2].value
    jv = float((g * (plus - minus) / (2 * h)).sum())
    assert abs(jt - jv) <= 1e-5 * max(abs(jt), abs(jv), 1e-8)


def test_split_concat_gradients_round_trip(rng):
    tape = Tape()
    x = tape.leaf(rng.standard_normal((2, 8, 3, 3)))
    parts = ops.split_channels(x, 4)
    y = ops.concat_channels(parts)
    g = rng.standard_normal(y.shape)
    grads = tape.backward(ops.weighted_sum(y, g))
    assert np.array_equal(grads[x], g)
    for i, p in enumerate(parts):
        assert np.array_equal(grads[p], g[:, 2 * i:2 * i + 2])


@pytest.mark.parametrize("scale", [3, 4, 6])
def test_hierarchical_gradient_pattern(scale):
    # a 1-pixel loss on y_j reaches split x_i exactly when i <= j (x_1 only feeds y_1)
    cfg = Res2NetBlockConfig(in_channels=4 * scale, out_channels=4 * scale, width=2, scale=scale)
    params = positive_block_params(cfg, seed=0)
    x0 = np.random.default_rng(0).uniform(0.1, 1, (1, cfg.in_channels, 7, 7))
    for j in range(1, scale + 1):
        tape = Tape()
        taps = {}
        block_forward(tape.leaf(x0), cfg, Bound(tape, params, np.float64), training=False, taps=taps)
        y = taps[f"y{j}"]
        mask = np.zeros(y.shape)
        mask[0, 0, 3, 3] = 1
        grads = tape.backward(ops.weighted_sum(y, mask))
        for i in range(1, scale + 1):
            reached = bool(grads[taps[f"split{i}"]].any())
            expect = i == j == 1 or 2 <= i <= j
            assert reached == expect, (i, j)


# --- finite-difference checker --------------------------------------------------

def test_grad_check_linear_is_exact():
    rng = np.random.default_rng(0)
    values = {"x": rng.standard_normal((3, 6)), "w": rng.standard_normal((4, 6)), "b": rng.standard_normal(4)}
    probe = rng.standard_normal((3, 4))
    report = grad_check(lambda t, v: ops.weighted_sum(ops.linear(v["x"], v["w"], v["b"]), probe),
                        values, epsilon=1e-3)
    assert report.passed and report.max_rel_error < 1e-9
    assert report.compared == 18 + 24 + 4


def test_grad_check_conv_bn_relu_stack():
    rng = np.random.default_rng(1)
    values = {"x": rng.standard_normal((2, 3, 6, 6)), "w1": rng.standard_normal((4, 3, 3, 3)) * 0.5,
              "g": rng.uniform(0.5, 1.5, 4), "b": rng.normal(0, 0.2, 4),
              "w2": rng.standard_normal((2, 4, 3, 3)) * 0.5}
    probe = rng.standard_normal((2, 2, 3, 3))

    def f(tape, v):
        h = ops.conv2d(v["x"], v["w1"], 1, 1)
        h = ops.relu(ops.batch_norm(h, v["g"], v["b"], np.zeros(4), np.ones(4), True))
        return ops.weighted_sum(ops.conv2d(h, v["w2"], 2, 1), probe)

    report = grad_check(f, values, threshold=1e-5)
    assert report.passed, report.summary()
    assert report.max_rel_error < 1e-5


def test_grad_check_full_block_with_se():
    cfg = Res2NetBlockConfig(in_channels=16, out_channels=32, width=2, scale=4, use_se=True, se_ratio=16)
    report = block_grad_check(cfg, seed=3)
    assert report.passed, report.summary()
    assert report.max_rel_error < 1e-4


def test_grad_check_reports_wrong_gradient():
    def broken(tape, v):
        x = v["x"]
        out = tape.record("double", (x,), 2 * x.value, lambda g: (g,))  # wrong by 2x
        return ops.sum(out)

    report = grad_check(broken, {"x": np.ones(3)})
    assert not report.passed
    assert report.max_rel_error == pytest.approx(0.5)


def test_grad_check_epsilon_range():
    with pytest.raises(ValidationError):
        grad_check(lambda t, v: ops.sum(v["x"]), {"x": np.ones(2)}, epsilon=1e-2)


def test_grad_check_samples_at_most_64(rng):
    report = grad_check(lambda t, v: ops.sum(ops.sigmoid(v["x"])), {"x": rng.standard_normal(500)})
    assert report.compared == 64


def test_grad_check_skips_kink_crossings():
    # a coordinate sitting within epsilon of the ReLU kink is skipped, not failed
    x = np.array([1.0, 2e-7, -1.0])
    report = grad_check(lambda t, v: ops.sum(ops.relu(v["x"])), {"x": x})
    assert report.params[0].skipped == 1 and report.params[0].compared == 2
    assert report.passed

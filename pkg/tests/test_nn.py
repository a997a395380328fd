import numpy as np
import pytest

from softtree.nn import Adam, Mlp, adam_step, elu, mlp_forward

from oracles import central_diff, rel_error


def test_elu():
    np.testing.assert_allclose(elu(np.array([-1.0, 0.0, 2.0])), [np.exp(-1) - 1, 0.0, 2.0])


def test_zero_network_outputs_zero():
    net = Mlp([4, 8, 3], weights=[np.zeros((4, 8)), np.zeros((8, 3))], biases=[np.zeros(8), np.zeros(3)])
    np.testing.assert_array_equal(net.forward(np.ones(4)), np.zeros(3))


def test_single_layer_is_affine(rng):
    W, b = rng.normal(size=(3, 2)), rng.normal(size=2)
    net = Mlp([3, 2], weights=[W], biases=[b])
    x = rng.normal(size=3)
    np.testing.assert_allclose(mlp_forward(net, x), x @ W + b)


def test_hand_computed_two_layer():
    net = Mlp([1, 1, 1], weights=[np.array([[-2.0]]), np.array([[3.0]])], biases=[np.zeros(1), np.array([1.0])])
    np.testing.assert_allclose(net.forward([1.0]), [3 * (np.exp(-2) - 1) + 1])


@pytest.mark.parametrize("sizes", [[4, 64, 64, 5], [4, 32, 32, 32, 1], [3, 7, 2]])
def test_backprop_matches_finite_differences(rng, sizes):
    worst = 0.0
    n_cases = 4 if max(sizes) > 32 else 35
    for _ in range(n_cases):
        net = Mlp(sizes, rng=rng)
        for b in net.biases:
            b[:] = rng.normal(0, 0.5, b.shape)
        X = rng.normal(size=(3, sizes[0]))
        G = rng.normal(size=(3, sizes[-1]))
        analytic = net.backward(X, G)
        numeric = central_diff(lambda: float((G * net.forward(X)).sum()), net.params())
        worst = max(worst, rel_error(analytic, numeric))
    assert worst < 1e-4


def test_parameter_counts():
    # 4->64->64->5: 4*64+64 + 64*64+64 + 64*5+5
    assert Mlp([4, 64, 64, 5], rng=0).n_params == 4805
    assert Mlp([4, 32, 32, 32, 1], rng=0).n_params == 4 * 32 + 32 + 2 * (32 * 32 + 32) + 33


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        Mlp([3, 2], rng=0).forward(np.ones(4))


def test_json_round_trip(rng):
    net = Mlp([2, 5, 3], rng=rng)
    back = Mlp.from_json(net.to_json())
    for a, b in zip(net.params(), back.params()):
        np.testing.assert_array_equal(a, b)


class TestAdam:
    def test_zero_gradient_no_change(self, rng):
        p = [rng.normal(size=(3, 2))]
        before = p[0].copy()
        Adam(p).step(p, [np.zeros((3, 2))])
        np.testing.assert_array_equal(p[0], before)

    def test_first_step_is_lr_sign(self):
        p = [np.zeros(4)]
        g = np.array([3.0, -0.2, 1e-3, -50.0])
        Adam(p, lr=0.01).step(p, [g])
        np.testing.assert_allclose(p[0], -0.01 * np.sign(g), rtol=1e-4)

    def test_functional_wrapper(self):
        p = [np.ones(2)]
        state = Adam(p, lr=0.1)
        p, state = adam_step(p, [np.ones(2)], state)
        np.testing.assert_allclose(p[0], 0.9)
        assert state.t == 1

    def test_non_finite_gradient_aborts(self):
        p = [np.ones(2)]
        with pytest.raises(FloatingPointError):
            Adam(p).step(p, [np.array([1.0, np.nan])])

    def test_deterministic(self):
        def run():
            net = Mlp([2, 4, 1], rng=7)
            opt = Adam(net.params())
            X = np.linspace(-1, 1, 20).reshape(10, 2)
            for _ in range(5):
                opt.step(net.params(), net.backward(X, net.forward(X)))
            return net.params()

        for a, b in zip(run(), run()):
            np.testing.assert_array_equal(a, b)

    def test_minimizes_quadratic(self):
        p = [np.array([5.0, -3.0])]
        opt = Adam(p, lr=0.1)
        for _ in range(500):
            opt.step(p, [2 * p[0]])
        np.testing.assert_allclose(p[0], 0.0, atol=1e-2)

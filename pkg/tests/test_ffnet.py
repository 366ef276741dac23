import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qode.ffnet import (BudgetError, FeedforwardNet, budget, compile_ffnet, demo_net,
                        lemma5_segment, net_eval, perturbation_bound, perturbation_threshold,
                        random_net, tanh_step, verify_lemma5)
from qode.integrate import Tolerance, run_segments, simulate_batch
from qode.schedule import ControlSchedule, embed_input

from conftest import grid


def reference_forward(net, x):
    """Plain-loop forward pass, written independently of net_eval."""
    z = list(map(float, x))
    for A, b in net.layers:
        z = [math.tanh(sum(A[i][j] * z[j] for j in range(len(z))) + b[i])
             for i in range(len(b))]
    return sum(c * v for c, v in zip(net.readout, z))


def test_zero_net_outputs_zero():
    net = FeedforwardNet(2, 2, ((np.zeros((2, 2)), np.zeros(2)),), np.ones(2), 1.0)
    assert net_eval(net, [0.3, 0.9]) == 0.0


def test_single_layer_identity():
    net = FeedforwardNet(2, 2, ((np.eye(2), np.zeros(2)),), np.array([1.0, 0.0]), 1.0)
    assert net_eval(net, [0.5, 0.0]) == pytest.approx(math.tanh(0.5), abs=1e-15)


def test_random_net_matches_reference(rng):
    net = random_net(rng, 3, 4, 3, 0.7)
    X = rng.uniform(size=(10, 3))
    np.testing.assert_allclose(net_eval(net, X), [reference_forward(net, x) for x in X],
                               atol=1e-12)


def test_net_validation():
    with pytest.raises(ValueError):
        FeedforwardNet(2, 2, ((np.ones((2, 2)), np.zeros(2)),), np.ones(2), 0.5)
    with pytest.raises(ValueError):
        FeedforwardNet(2, 2, ((np.ones((2, 3)), np.zeros(2)),), np.ones(2), 1.0)
    with pytest.raises(ValueError):
        FeedforwardNet(2, 2, (), np.ones(2), 1.0)


def test_json_round_trip():
    net = demo_net()
    back = FeedforwardNet.from_json(net.to_json())
    assert back.to_json() == net.to_json()
    with pytest.raises(ValueError, match="missing"):
        FeedforwardNet.from_json({"width": 2})


def test_perturbation_bound_examples():
    assert perturbation_bound(1.0, 0.0) == 0.0
    e2 = math.exp(2)
    # formula at K = 0: 2 e^2 delta / (2 - 9 (e^2 - 1) delta)
    assert perturbation_bound(0.0, 0.01) == pytest.approx(2 * e2 * 0.01 / (2 - 9 * (e2 - 1) * 0.01))
    assert perturbation_bound(0.0, 0.01) == pytest.approx(0.10371, abs=1e-5)
    with pytest.raises(BudgetError, match="budget infeasible"):
        perturbation_bound(1.0, perturbation_threshold(1.0))


@given(st.floats(0, 3), st.floats(1e-9, 0.999))
def test_bound_above_first_order_floor(K, frac):
    delta = frac * perturbation_threshold(K)
    assert perturbation_bound(K, delta) >= math.exp(4 * K + 2) * delta * (1 - 1e-12)


def test_demo_budget():
    b = budget(demo_net(), 1e-2)
    assert (b.K, b.a3) == (1.5, 8.0)
    assert b.a1 == pytest.approx(8 * math.exp(8) * 1.5)
    assert b.a2 == pytest.approx(9 * math.expm1(8) * 1.5)
    assert b.deltas[-1] <= 1e-2 / b.c_norm
    assert all(x < y for x, y in zip(b.deltas, b.deltas[1:]))
    assert all(d < b.a3 / b.a2 for d in b.deltas[:-1])
    assert all(r > 0 and math.isfinite(r) for r in b.r1 + b.r3)
    # r1 = -ln((M W + 1) delta / (1 + delta))
    assert b.r1[0] == pytest.approx(-math.log(2.0 * b.deltas[0] / (1 + b.deltas[0])))


@given(st.floats(1e-8, 1.0))
def test_budget_meets_eps(eps):
    b = budget(demo_net(), eps)
    assert b.deltas[-1] <= eps / b.c_norm * (1 + 1e-9)


def test_infeasible_budget_is_reported(rng):
    net = random_net(rng, 2, 8, 40, 5.0)
    with pytest.raises(BudgetError, match="underflow|weight bound|depth|admissible"):
        budget(net, 1e-3)


def test_compile_structure_independent_of_eps():
    net = demo_net()
    a, b = compile_ffnet(net, 1e-2), compile_ffnet(net, 1e-3)
    assert (a.width, a.num_segments) == (b.width, b.num_segments) == (6, 6)
    assert a.metadata["budget"]["r1"] != b.metadata["budget"]["r1"]


def test_padding_when_width_differs_from_input(rng):
    net = random_net(rng, 3, 2, 2, 0.4)
    s = compile_ffnet(net, 1e-2)
    assert s.width == 9 and s.num_segments == 6
    X = rng.uniform(size=(20, 3))
    assert np.max(np.abs(simulate_batch(s, X).output - net_eval(net, X))) <= 1e-2


def test_zero_weights_compiled_gives_zero():
    net = FeedforwardNet(1, 1, ((np.zeros((1, 1)), np.zeros(1)),), np.ones(1), 0.5)
    s = compile_ffnet(net, 1e-3)
    out = simulate_batch(s, grid(1, 5)).output
    # alpha keeps x e^{-r1} from the weight step, which the budget accounts for
    assert np.max(np.abs(out)) <= s.metadata["budget"]["Deltas"][0] <= 1e-3


def test_per_layer_contracts(rng):
    net = random_net(rng, 2, 3, 2, 0.5)
    eps = 1e-2
    s = compile_ffnet(net, eps)
    b = budget(net, eps)
    m, M, Wt = 3, net.weight_bound, net.width
    X = rng.uniform(size=(30, 2))
    y = embed_input(X, s.width)
    z = X.copy()
    sched = ControlSchedule(s.width, 2, s.segments, ())
    for k, (A, bias) in enumerate(net.layers):
        pre = z @ A.T + bias
        y, _, _, _ = run_segments(sched, y, Tolerance(1e-12, 1e-30), 3 * k, 3 * k + 1)
        lim = (M * Wt + 1) * b.deltas[k]
        assert np.max(np.abs(y[:, :m])) <= lim
        assert np.max(np.abs(y[:, m:2 * m])) <= lim
        assert np.max(np.abs(y[:, 2 * m:] - pre)) <= lim
        y, _, _, _ = run_segments(sched, y, Tolerance(1e-12, 1e-30), 3 * k + 1, 3 * k + 3)
        z = np.tanh(pre)
        assert np.max(np.abs(y[:, :m] - z)) <= b.Deltas[k]
        assert np.max(np.abs(y[:, m:])) <= b.Deltas[k]


def test_activation_step_is_pluggable():
    calls = []

    def step(m, label):
        calls.append(m)
        return tanh_step(m, label)

    compile_ffnet(demo_net(), 1e-2, activation_step=step)
    assert calls == [2, 2]


def test_lemma5_unperturbed_and_small():
    seg = lemma5_segment()
    assert seg.duration == 1.0
    rep = verify_lemma5(1.0, 1e-4, 100, np.random.default_rng(3))
    assert rep.passed and rep.max_ratio < 1.0
    zero = verify_lemma5(1.0, 0.0, 10, np.random.default_rng(3))
    assert zero.max_deviation == 0.0 and zero.passed

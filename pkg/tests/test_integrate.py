import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from qode.integrate import (CompiledField, IntegrationError, Tolerance, default_tolerance,
                            integrate_segment, integrate_segment_fixed, simulate, simulate_batch)
from qode.schedule import ControlSchedule, SegmentBuilder, segment_rhs


def _linear_segment(A, b):
    sb = SegmentBuilder()
    for i in range(len(A)):
        for j in range(len(A)):
            sb.linear(i, j, A[i, j])
        sb.constant(i, b[i])
    return sb.build()


def test_linear_flow_matches_matrix_exponential(rng):
    A = rng.normal(size=(4, 4))
    b = rng.normal(size=4)
    y0 = rng.normal(size=4)
    M = np.zeros((5, 5))
    M[:4, :4], M[:4, 4] = A, b
    exact = (expm(M) @ np.append(y0, 1.0))[:4]
    got = integrate_segment(_linear_segment(A, b), y0, Tolerance(1e-12, 1e-14))
    assert np.max(np.abs(got - exact)) < 1e-10


@given(st.floats(-2.0, 2.0), st.floats(0.05, 1.0))
def test_logistic_closed_form(r, y0):
    # y' = r y - r y^2 has y(1) = y0 e^r / (1 - y0 + y0 e^r)
    seg = SegmentBuilder().linear(0, 0, r).quadratic(0, 0, 0, -r).build()
    exact = y0 * np.exp(r) / (1 - y0 + y0 * np.exp(r))
    assert integrate_segment(seg, [y0])[0] == pytest.approx(exact, rel=1e-9, abs=1e-12)


def test_compiled_field_dense_and_sparse_agree(rng):
    sb = SegmentBuilder()
    W = 200
    for _ in range(300):
        i, j, k = rng.integers(0, W, 3)
        try:
            sb.quadratic(int(i), int(j), int(k), float(rng.normal()))
            sb.linear(int(i), int(j), float(rng.normal()))
        except ValueError:
            pass
    sb.constant(3, 1.5)
    seg = sb.build()
    y = rng.normal(size=(5, W))
    sparse = CompiledField(seg, W)
    assert sparse.sparse
    ref = np.stack([segment_rhs(seg, row) for row in y])
    np.testing.assert_allclose(sparse(y), ref, rtol=1e-12, atol=1e-12)


def test_adaptive_agrees_with_fixed_step_rk4():
    seg = (SegmentBuilder().linear(0, 1, 1.0).quadratic(1, 0, 0, -1.0)
           .quadratic(1, 1, 1, -0.5).build())
    y0 = np.array([0.3, -0.2])
    coarse = integrate_segment_fixed(seg, y0, 50)
    fine = integrate_segment_fixed(seg, y0, 100)
    adaptive = integrate_segment(seg, y0)
    # RK4 is fourth order: halving h cuts the error by ~16
    e1, e2 = np.abs(coarse - adaptive).max(), np.abs(fine - adaptive).max()
    assert e2 < 1e-8 and 10 < e1 / e2 < 22


def test_escape_reports_segment_index():
    ok = SegmentBuilder().constant(1, 1.0).build()
    blow = SegmentBuilder().quadratic(0, 0, 0, 1.0).build()  # y' = y^2 escapes at t = 1/y0
    sched = ControlSchedule(2, 1, (ok, blow), ((0, 1.0),))
    with pytest.raises(IntegrationError, match="segment 2") as exc:
        simulate(sched, [2.0])
    assert exc.value.segment_index == 1


def test_batch_failure_names_the_point():
    blow = SegmentBuilder().quadratic(0, 0, 0, 1.0).build()
    sched = ControlSchedule(1, 1, (blow,), ((0, 1.0),))
    X = np.array([[0.1], [0.2], [3.0]])
    with pytest.raises(IntegrationError, match=r"x=\[3.0\]"):
        simulate_batch(sched, X)


def test_batch_matches_pointwise(rng):
    seg = SegmentBuilder().linear(1, 0, 1.0).quadratic(1, 1, 1, -1.0).build()
    sched = ControlSchedule(2, 1, (seg,), ((1, 1.0),))
    X = rng.uniform(0, 1, (7, 1))
    batch = simulate_batch(sched, X, chunk=3).output
    single = [simulate(sched, x).output for x in X]
    np.testing.assert_allclose(batch, single, rtol=1e-8)


def test_env_tolerance(monkeypatch):
    monkeypatch.setenv("QODE_DEFAULT_TOL", "1e-6,1e-9")
    assert default_tolerance() == Tolerance(1e-6, 1e-9)
    monkeypatch.setenv("QODE_DEFAULT_TOL", "garbage")
    with pytest.raises(ValueError):
        default_tolerance()
    monkeypatch.delenv("QODE_DEFAULT_TOL")
    assert default_tolerance() == Tolerance(1e-10, 1e-12)


def test_trajectory_and_downsample():
    seg = SegmentBuilder().constant(0, 1.0).build()
    sched = ControlSchedule(1, 1, (seg, seg), ((0, 1.0),))
    res = simulate(sched, [0.0], trajectory=True)
    tr = res.trajectory
    assert tr.times[0] == 0.0 and tr.times[-1] == pytest.approx(2.0)
    assert np.all(np.diff(tr.times) > 0)
    assert tr.states[-1, 0] == pytest.approx(2.0)
    small = tr.downsample(3)
    assert len(small.times) <= 3 and small.times[-1] == tr.times[-1]

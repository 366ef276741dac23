import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.polynomial import Polynomial

from qode.integrate import default_tolerance, run_segments, simulate_batch
from qode.schedule import embed_input
from qode.sobolev import (SobolevConfig, choose_parameters, compile_sobolev,
                          direct_fhat_eval, error_bound, multi_indices, num_monomials,
                          formula_segment_count, recenter, recentered_eval, segment_count,
                          taylor_coefficients, taylor_eval, taylor_shift, taylor_terms)
from qode.targets import constant, cos2d, sin1d, zero

from conftest import grid


def test_sin1d_parameters():
    p = choose_parameters(2, 1, 0.1, 0.5)
    assert p.N == 5
    assert p.delta == pytest.approx(0.025)
    assert p.c == pytest.approx(10 * math.atanh(0.95))
    assert error_bound(2, 1, 5, p.delta) == pytest.approx(0.09)


def test_cos2d_parameters_exact_integer_guard():
    # (n!/d^n * gamma * eps / 2^d)^(-1/n) is exactly 8 here
    p = choose_parameters(2, 2, 0.25, 0.5)
    assert p.N == 8
    assert p.delta == pytest.approx(0.0625 / 77)


@given(st.integers(1, 4), st.integers(1, 3), st.floats(0.01, 1.0), st.floats(0.05, 0.95))
def test_bound_never_exceeds_eps(n, d, eps, gamma):
    p = choose_parameters(n, d, eps, gamma)
    assert 0 < p.delta <= 0.499
    assert p.c > 0
    # capped delta can only make the bound smaller than requested
    assert error_bound(n, d, p.N, p.delta) <= eps * (1 + 1e-9)


@pytest.mark.parametrize("args", [(2, 1, 0.0, 0.5), (2, 1, 0.1, 1.5), (0, 1, 0.1, 0.5)])
def test_bad_parameters(args):
    with pytest.raises(ValueError):
        choose_parameters(*args)


def test_multi_indices():
    assert num_monomials(3, 2) == len(multi_indices(3, 2)) == 6
    assert multi_indices(2, 2) == [(0, 0), (0, 1), (1, 0)]


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6), st.floats(-2, 2))
def test_taylor_shift_matches_polynomial_composition(p, s):
    want = Polynomial(p)(Polynomial([-s, 1.0])).coef
    want = np.pad(want, (0, len(p) - len(want)))
    np.testing.assert_allclose(taylor_shift(p, s), want, atol=1e-9 * (1 + np.abs(want).max()))


@given(st.integers(0, 4), st.floats(0, 1))
def test_recentered_polynomial_evaluates_the_same(k, x):
    f = sin1d(3)
    coeffs = taylor_coefficients(f, (k,), 4)
    rc = recenter(coeffs, (k,), 4, 1.0, 3)
    X = np.array([x])
    assert recentered_eval(rc, 1.0, X) == pytest.approx(taylor_eval(coeffs, [k / 4], X), abs=1e-12)


def test_recenter_two_dims(rng):
    f = cos2d(3)
    coeffs = taylor_coefficients(f, (2, 1), 3)
    rc = recenter(coeffs, (2, 1), 3, 0.5, 3)
    X = rng.uniform(size=(10, 2))
    np.testing.assert_allclose(recentered_eval(rc, 0.5, X), taylor_eval(coeffs, [2 / 3, 1 / 3], X),
                               atol=1e-12)


def test_taylor_coefficients_validate_grid_index():
    with pytest.raises(ValueError):
        taylor_coefficients(sin1d(2), (6,), 5)


def test_terms_sum_to_direct_formula(rng):
    f, cfg = cos2d(2), SobolevConfig(0.4)
    p = choose_parameters(2, 2, 0.4)
    X = rng.uniform(size=(20, 2))
    total = sum(t.value(X, p.partition, cfg.shift) for t in taylor_terms(f, cfg, p))
    np.testing.assert_allclose(total, direct_fhat_eval(f, cfg, X, p), atol=1e-13)


@pytest.mark.parametrize("f,eps", [(sin1d(2), 0.1), (sin1d(3), 0.05), (cos2d(2), 0.25)])
def test_direct_formula_within_bound(f, eps):
    cfg = SobolevConfig(eps)
    p = choose_parameters(f.n, f.d, eps)
    X = grid(f.d, 41 if f.d == 2 else 201)
    err = np.max(np.abs(direct_fhat_eval(f, cfg, X) - f(X)))
    assert err <= error_bound(f.n, f.d, p.N, p.delta) <= eps


def test_segment_count_formulas():
    assert segment_count(1, 5, 12) == formula_segment_count(2, 1, 5) == 11
    # 243 terms, 20 per batch: 13 batches, while ceil(2T/B) counts 25 half-batches
    assert segment_count(2, 8, 243) == 33
    assert formula_segment_count(2, 2, 8) == 32


@given(st.integers(1, 400), st.integers(1, 3), st.integers(1, 9))
def test_actual_count_never_below_formula_count(T, d, N):
    assert segment_count(d, N, T) >= 7 + math.ceil(2 * T / ((N + 2) * d))


def test_compile_sin1d_structure_and_accuracy():
    f, cfg = sin1d(2), SobolevConfig(0.1)
    s = compile_sobolev(f, cfg)
    m = s.metadata
    assert (m["N"], s.width, s.num_segments) == (5, 15, 11)
    assert all(seg.duration == 1.0 for seg in s.segments)
    X = grid(1, 21)
    out = simulate_batch(s, X).output
    assert np.max(np.abs(out - direct_fhat_eval(f, cfg, X))) < 1e-6
    assert np.max(np.abs(out - f(X))) <= 0.1


def test_zero_target_has_only_bootstrap():
    s = compile_sobolev(zero(1, 2), SobolevConfig(0.2))
    assert s.num_segments == 7 and s.metadata["terms"] == 0
    assert np.all(simulate_batch(s, grid(1, 5)).output == 0.0)


def test_constant_target_uses_one_term_per_cell():
    f = constant(0.5, 1, 2)
    cfg = SobolevConfig(0.2)
    s = compile_sobolev(f, cfg)
    N = s.metadata["N"]
    # P_k = 0.5 is a constant, so (x+1)^1 coefficients vanish and are skipped
    assert s.metadata["terms"] == N + 1
    np.testing.assert_allclose(simulate_batch(s, grid(1, 11)).output, 0.5, atol=1e-6)


def test_division_chain_variant_also_realizes_fhat():
    f = sin1d(2)
    cfg = SobolevConfig(0.4, reset_gain=None, psi_floor=1e-9)
    s = compile_sobolev(f, cfg)
    X = grid(1, 11)
    out = simulate_batch(s, X).output
    assert np.max(np.abs(out - direct_fhat_eval(f, cfg, X))) < 1e-3


def test_config_validation():
    for kw in ({"eps": 0.0}, {"eps": 0.1, "gamma": 1.0}, {"eps": 0.1, "shift": 0.0},
               {"eps": 0.1, "step2": "shadow"}, {"eps": 0.1, "psi_floor": -1.0}):
        with pytest.raises(ValueError):
            SobolevConfig(**kw)


def test_running_sum_after_each_batch_matches_partial_sums():
    f, cfg = cos2d(2), SobolevConfig(0.4)
    p = choose_parameters(2, 2, 0.4)
    s = compile_sobolev(f, cfg)
    terms = taylor_terms(f, cfg, p)
    B, sum_slot = (p.N + 2) * 2, s.width - 1
    X = np.random.default_rng(2).uniform(size=(6, 2))
    y = embed_input(X, s.width)
    y, _, _, _ = run_segments(s, y, default_tolerance(), 0, 7)
    for n, lo in enumerate(range(0, len(terms), B)):
        y, _, _, _ = run_segments(s, y, default_tolerance(), 7 + 2 * n, 9 + 2 * n)
        partial = sum(t.value(X, p.partition, cfg.shift, cfg.psi_floor) for t in terms[:lo + B])
        np.testing.assert_allclose(y[:, sum_slot], partial, atol=1e-6)

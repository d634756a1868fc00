import math

import numpy as np
import pytest
from scipy.special import lambertw

from shockwave.characteristics import solve_implicit_u
from shockwave.dist_core import AuxiliaryDist, Nonlinearity, borel_pmf
from shockwave.series import (
    FormalSeries,
    MultiIndex,
    SeriesDivergenceError,
    TruncationPolicy,
    eval_u_adaptive,
    eval_u_series,
    eval_u_series_general,
    formal_fixedpoint_coeffs,
    kernel_determinant,
    progeny_coeff,
    shell_indices,
    single_type_radius_check,
    weighted_progeny_coeff,
)

BURGERS = Nonlinearity.burgers()
CUBIC = Nonlinearity([0, -1, 0, 1 / 3])


def lambert_u(c, t, x):
    return -lambertw(-t * c * math.exp(-t - x)).real / t


def test_multi_index():
    n = MultiIndex((2, 0, 1))
    assert n.N == 3 and n.M == 5 and not n.is_zero
    assert MultiIndex((0, 0)).is_zero


@pytest.mark.parametrize("M, m", [(1, 1), (5, 2), (7, 3), (9, 4)])
def test_shells_partition_weighted_degree(M, m):
    idx = shell_indices(M, m)
    assert np.all(idx @ np.arange(1, m + 1) == M)
    assert len({tuple(r) for r in idx}) == len(idx)
    # lexicographic order inside a shell
    assert [tuple(r) for r in idx] == sorted(tuple(r) for r in idx)


def test_shell_count_two_types():
    # solutions of n1 + 2 n2 = M
    for M in range(1, 20):
        assert len(shell_indices(M, 2)) == M // 2 + 1


def test_progeny_coeff_hand_values():
    q = AuxiliaryDist([0.5, 0.5])
    assert progeny_coeff((1, 1), 1, 0.4, q) == pytest.approx(0.2 * math.exp(-1.2), rel=1e-14)
    assert weighted_progeny_coeff((1, 1), 0.4, q) == pytest.approx(0.3 * math.exp(-1.2), rel=1e-14)
    assert progeny_coeff((1, 0), 1, 0.4, q) == pytest.approx(math.exp(-0.4))
    # a type-1 root cannot produce a tree without a type-1 individual
    assert progeny_coeff((0, 2), 1, 0.4, q) == 0.0


@pytest.mark.parametrize("t", [0.3, 0.9])
def test_single_type_coeffs_are_borel(t):
    q = AuxiliaryDist([1.0])
    for n in range(1, 30):
        assert progeny_coeff((n,), 1, t, q) == pytest.approx(borel_pmf(t, n), rel=1e-12)


def test_progeny_coeff_t_zero_limit():
    q = AuxiliaryDist([0.5, 0.5])
    assert progeny_coeff((1, 0), 1, 0.0, q) == 1.0
    assert progeny_coeff((2, 0), 1, 0.0, q) == 0.0
    assert weighted_progeny_coeff((0, 1), 0.0, q) == 0.5


@pytest.mark.parametrize("c, t, x", [(0.5, 0.5, 0.0), (0.9, 0.8, 0.0), (0.3, 0.2, 2.0), (1.0, 0.5, 0.1)])
def test_series_matches_lambert(c, t, x):
    r = eval_u_series(t, x, [c])
    assert r.status == "ok"
    assert r.value == pytest.approx(lambert_u(c, t, x), abs=1e-10)


def test_series_value_reported_with_partial_sum():
    r = eval_u_series(0.8, 0.0, [0.9])
    assert abs(r.partial_sum - lambert_u(0.9, 0.8, 0.0)) > 1e-8
    assert abs(r.value - lambert_u(0.9, 0.8, 0.0)) < 1e-10
    assert r.tail_bound >= abs(r.partial_sum - lambert_u(0.9, 0.8, 0.0)) * 0.5


def test_series_at_time_zero():
    assert eval_u_series(0.0, 0.7, [0.3, -0.2]).value == pytest.approx(0.3 * math.exp(-0.7) - 0.2 * math.exp(-1.4))


@pytest.mark.parametrize("p, t, x", [
    ([0.5, 0.5], 0.4, 0.1),
    ([0.2, 0.3, 0.5], 0.3, 0.2),
    ([-0.3, 0.5], 0.3, 0.2),
    ([0.0, 1.0], 0.3, 0.2),
    ([0.4, -0.2, 0.1], 0.5, 0.3),
])
def test_series_matches_characteristics(p, t, x):
    u = solve_implicit_u(t, x, p, BURGERS).u
    assert eval_u_series(t, x, p).value == pytest.approx(u, abs=1e-10)


def test_general_series_reduces_to_burgers():
    for p, t, x in [([0.5, 0.5], 0.4, 0.1), ([1.0], 0.6, 0.3)]:
        a = eval_u_series_general(t, x, p, BURGERS).value
        b = eval_u_series(t, x, p).value
        assert a == pytest.approx(b, abs=1e-12)


@pytest.mark.parametrize("p, t, x", [([0.5, 0.5], 0.3, 0.2), ([1.0], 0.4, 0.5), ([0.2, 0.3, 0.5], 0.1, 0.05)])
def test_general_series_cubic(p, t, x):
    u = solve_implicit_u(t, x, p, CUBIC).u
    r = eval_u_series_general(t, x, p, CUBIC)
    assert abs(r.value - u) <= max(1e-10, r.tail_bound)
    assert eval_u_adaptive(t, x, p, CUBIC).value == pytest.approx(u, abs=1e-10)


def test_odd_shells_vanish_for_cubic_and_tail_is_not_lost():
    # Y = 2 almost surely, so trees have odd size; the tail model must step over the zeros
    r = eval_u_series_general(0.4, 0.0, [1.0], CUBIC, TruncationPolicy(M_max=80))
    assert r.tail_bound > 1e-3
    assert abs(1 - r.partial_sum) > 1e-3
    assert abs(1 - r.value) < 1e-4


def test_adaptive_reaches_tolerance_at_x_zero():
    r = eval_u_adaptive(0.4, 0.0, [1.0], CUBIC)
    assert r.value == pytest.approx(1.0, abs=1e-10)


def test_divergence_detected_past_radius():
    # c = 2 blows up at t ~ 0.232; at t = 0.5 the terms grow geometrically
    with pytest.raises(SeriesDivergenceError) as exc:
        eval_u_series(0.5, 0.0, [2.0])
    assert len(exc.value.shells) > 5


def test_series_inconclusive_near_radius():
    r = eval_u_series(0.3, 0.0, [1.05], TruncationPolicy(M_max=20))
    assert r.status in {"ok", "inconclusive"}
    assert r.tail_bound > 0


@pytest.mark.parametrize("t, c, inside", [(0.5, 0.5, True), (1.0, 1.0, False), (0.2, 2.0, True), (0.3, 2.0, False)])
def test_single_type_radius(t, c, inside):
    assert single_type_radius_check(t, c) is inside


def test_kernel_determinant_rank_one():
    rng = np.random.default_rng(5)
    for _ in range(20):
        m = rng.integers(1, 5)
        q = AuxiliaryDist(rng.dirichlet(np.ones(m)))
        r = rng.uniform(0, 1, m)
        t = rng.uniform(0, 2)
        det, closed = kernel_determinant(t, q, r)
        assert det == pytest.approx(closed, abs=1e-12)


def test_formal_series_arithmetic():
    x = FormalSeries.constant(1.0, 1, 6).shift(0)
    e = x.exp()
    np.testing.assert_allclose(e.coeffs, [1 / math.factorial(i) for i in range(7)], rtol=1e-15)
    sq = (FormalSeries.constant(1.0, 1, 6) + x) ** 2
    np.testing.assert_allclose(sq.coeffs, [1, 2, 1, 0, 0, 0, 0])


def test_oracle_single_type_is_borel():
    coeffs = formal_fixedpoint_coeffs(0.7, AuxiliaryDist([1.0]), 10)
    for n in range(1, 11):
        assert coeffs[(1, (n,))] == pytest.approx(borel_pmf(0.7, n), rel=1e-12)

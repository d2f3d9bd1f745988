import numpy as np
import pytest

from superhol.algebra import GrassmannElement, SuperMatrix
from superhol.errors import PreconditionError
from superhol.geometry import ChartSpec, ConnectionSpec
from superhol.holonomy import (
    SamplingConfig,
    ambrose_singer_generator,
    base_change,
    base_change_point,
    contract_at,
    lie_closure,
    rect_first_differences,
    rect_second_derivative,
    richardson_to_zero,
    sample_holonomy_algebra,
    section_residual,
    verify_parallel_invariance,
)
from superhol.transport import SPoint, TransportOptions, build_straight_line, constant_path, gauge_transform, parallel_transport

from conftest import random_connection, random_gauge, random_grassmann, random_spoint, sf

OPTS = TransportOptions(step=2e-3)


def _origin(chart, G):
    return SPoint.from_real(chart, [0.0] * chart.even_dim, G)


def test_odd_line_no_extra_generators_gives_rank_zero(odd_line):
    hb = sample_holonomy_algebra(odd_line, _origin(odd_line.chart, 0), 0, SamplingConfig(num_points=3, num_tangents=3), OPTS)
    assert hb.rank == 0


def test_odd_line_two_extra_generators_gives_rank_one(odd_line):
    hb = sample_holonomy_algebra(odd_line, _origin(odd_line.chart, 0), 2, SamplingConfig(num_points=3, num_tangents=6), OPTS)
    assert hb.rank == 1
    b = hb.basis[0].entry(0, 0)
    nz = np.flatnonzero(np.abs(b.coeffs) > 1e-12)
    assert list(nz) == [0b11]


def test_odd_line_generator_formula(odd_line):
    rng = np.random.default_rng(3)
    x = _origin(odd_line.chart, 2)
    for _ in range(5):
        u = [random_grassmann(rng, 2, 1)]
        v = [random_grassmann(rng, 2, 1)]
        w = random_grassmann(rng, 2, 0)
        g = ambrose_singer_generator(odd_line, x, constant_path(x), u, v, OPTS)
        got = (g @ SuperMatrix.from_entries([[w]], 0, 1)).entry(0, 0)
        want = u[0] * v[0] * w * -2.0
        assert np.max(np.abs(got.coeffs - want.coeffs)) <= 1e-8


def test_generator_parity_check(odd_line):
    x = _origin(odd_line.chart, 2)
    bad = [GrassmannElement.scalar(1.0, 2)]
    with pytest.raises(Exception):
        ambrose_singer_generator(odd_line, x, constant_path(x), bad, bad, OPTS)


def test_lie_closure_real_matrices():
    # E, F generate sl2 under brackets
    E = SuperMatrix.from_real(np.array([[0.0, 1.0], [0.0, 0.0]]), 2, 0, 0)
    F = SuperMatrix.from_real(np.array([[0.0, 0.0], [1.0, 0.0]]), 2, 0, 0)
    hb = lie_closure([E, F])
    assert hb.rank == 3
    assert lie_closure([E, E * 2.0]).rank == 1
    assert lie_closure([]).rank == 0


def test_richardson_exact_for_polynomials():
    s = [0.1, 0.05, 0.025]
    vals = [np.array([3.0 + 2 * x - 5 * x * x]) for x in s]
    assert abs(richardson_to_zero(s, vals)[0] - 3.0) < 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_second_derivative_law(seed):
    rng = np.random.default_rng(seed)
    G = 2
    conn = random_connection(rng, 1, 1, 1, 1, amp=0.5)
    a = random_spoint(rng, conn.chart, G)
    zero = GrassmannElement.zero(G)
    even = [GrassmannElement.scalar(1.0, G), zero]
    odd1 = [zero, GrassmannElement.generator(1, G)]
    odd2 = [zero, GrassmannElement.generator(2, G)]
    for u, v in ((even, odd1), (odd1, odd2)):
        got = rect_second_derivative(conn, a, u, v, opts=TransportOptions(step=1e-3))
        want = contract_at(conn, a, v, u) * 2.0
        assert got.max_abs_diff(want) / want.norm() <= 1e-4
    svals = [0.1, 0.05, 0.025]
    firsts = rect_first_differences(conn, a, even, odd1, svals, OPTS)
    # the asymptotic slope is exactly 1; finite s moves it by O(s)
    slope = np.polyfit(np.log(svals), np.log(firsts), 1)[0]
    assert slope >= 0.95


def test_base_change_commutes_with_transport(mixed):
    rng = np.random.default_rng(5)
    G = 2
    a = random_spoint(rng, mixed.chart, G)
    b = random_spoint(rng, mixed.chart, G)
    path = build_straight_line(a, b)
    P = parallel_transport(path, mixed, OPTS)
    images = [random_grassmann(rng, 3, 1), random_grassmann(rng, 3, 1)]
    moved = build_straight_line(base_change_point(a, images), base_change_point(b, images))
    fresh = parallel_transport(moved, mixed, OPTS)
    assert base_change(P, images).matrix.max_abs_diff(fresh.matrix) <= 1e-9


def _flat_gauged(seed):
    rng = np.random.default_rng(seed)
    chart = ChartSpec(1, 1, 0)
    flat = ConnectionSpec.flat(chart, 1, 1)
    V = random_gauge(rng, chart, 1, 1)
    const = [sf("1.5", 1, 1), sf("0.5*th1", 1, 1) * 0 + sf("0", 1, 1)]
    col = [V[0][0] * const[0] + V[0][1] * const[1], V[1][0] * const[0] + V[1][1] * const[1]]
    return gauge_transform(flat, V), col


def test_parallel_section_invariant_under_holonomy():
    conn, X = _flat_gauged(6)
    x = SPoint.from_real(conn.chart, [0.1], 2)
    rep = verify_parallel_invariance(conn, X, x, num_loops=16, opts=OPTS)
    assert rep.ok
    assert len(rep.loop_deviations) == 16
    assert rep.max_deviation <= 1e-8


def test_non_parallel_section_rejected(mixed):
    X = [sf("1", 1, 1), sf("0", 1, 1)]
    x = SPoint.from_real(mixed.chart, [0.1], 1)
    assert section_residual(mixed, X, [x]) > 1e-3
    with pytest.raises(PreconditionError):
        verify_parallel_invariance(mixed, X, x, num_loops=2, opts=OPTS)


def test_sampling_is_deterministic(mixed):
    x = SPoint.from_real(mixed.chart, [0.0], 0)
    cfg = SamplingConfig(num_points=2, num_tangents=3, seed=11)
    a = sample_holonomy_algebra(mixed, x, 1, cfg, OPTS)
    b = sample_holonomy_algebra(mixed, x, 1, cfg, OPTS)
    assert a.rank == b.rank
    for m1, m2 in zip(a.basis, b.basis):
        assert np.array_equal(m1.data, m2.data)

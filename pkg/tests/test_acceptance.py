"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (lines are printed even when
output capture is on) or ``python tests/test_acceptance.py``.
"""

import math
import time

import numpy as np
import pytest

from superhol.algebra import GrassmannElement, SuperMatrix
from superhol.galaev import compare_spans, extract_all, galaev_generators_direct, transport_derivative_limit
from superhol.geometry import ChartSpec, ConnectionSpec, curvature_frame, sfm_text
from superhol.holonomy import (
    SamplingConfig,
    ambrose_singer_generator,
    base_change,
    contract_at,
    rect_first_differences,
    rect_second_derivative,
    sample_holonomy_algebra,
    verify_parallel_invariance,
)
from superhol.superexpr import (
    Const,
    SuperFunction,
    Var,
    VarContext,
    add,
    func,
    mul,
    parse_superfunction,
    power,
    sf_partial,
    sf_print,
    sf_pullback,
)
from superhol.transport import (
    SPoint,
    TransportOptions,
    body_transport,
    build_polygon,
    build_straight_line,
    constant_path,
    gauge_transform,
    parallel_transport,
    path_B_norm,
    path_ordered_series,
    transport_concat,
    wilson_supertrace,
    wilson_trace,
)

from conftest import (
    mixed_connection,
    odd_line_connection,
    random_connection,
    random_gauge,
    random_grassmann,
    random_sf,
    random_spoint,
)

H = TransportOptions(step=1e-3)


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


def _worst(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


# ---------------------------------------------------------------- 1

def test_criterion_01_worked_example(report):
    t0 = time.perf_counter()
    conn = odd_line_connection()
    chart = conn.chart
    x = SPoint.from_real(chart, [], 0)

    a = sfm_text(curvature_frame(conn, 0, 0)) == [["2"]]
    cfg = SamplingConfig(num_points=4, num_tangents=8, seed=42)
    rank0 = sample_holonomy_algebra(conn, x, 0, cfg, H).rank
    hb = sample_holonomy_algebra(conn, x, 2, cfg, H)
    b = rank0 == 0
    c = hb.rank == 1
    if c:
        coeffs = hb.basis[0].entry(0, 0).coeffs
        c = bool(np.all(np.abs(np.delete(coeffs, 0b11)) <= 1e-12) and abs(coeffs[0b11]) > 0)

    rng = np.random.default_rng(1)
    x2 = x.with_generators(2)
    d_err = 0.0
    for _ in range(20):
        u = [random_grassmann(rng, 2, 1)]
        v = [random_grassmann(rng, 2, 1)]
        w = random_grassmann(rng, 2, 0)
        g = ambrose_singer_generator(conn, x2, constant_path(x2), u, v, H)
        got = (g @ SuperMatrix.from_entries([[w]], 0, 1)).entry(0, 0)
        d_err = max(d_err, _worst(got.coeffs, (u[0] * v[0] * w * -2.0).coeffs))
    d = d_err <= 1e-8
    elapsed = time.perf_counter() - t0
    ok = report(
        1,
        "curvature and holonomy of the odd line",
        a and b and c and d and elapsed < 5.0,
        f"R=2 exact: {a}; rank L'=0: {rank0}; rank L'=2: {hb.rank}, basis on eta1eta2: {c}; "
        f"generator vs -2uvw: {d_err:.1e}; {elapsed:.2f}s",
    )
    assert ok


# ---------------------------------------------------------------- 2

def _gauge_scene(seed, p, q):
    rng = np.random.default_rng(seed)
    conn = random_connection(rng, 1, 1, p, q, L=2, amp=0.5)
    pts = [random_spoint(rng, conn.chart, 2) for _ in range(4)]
    loop = build_polygon(pts, closed=True)
    V = random_gauge(rng, conn.chart, p, q)
    return conn, loop, V


def test_criterion_02_gauge_invariance(report):
    t0 = time.perf_counter()
    worst = {}
    super_worst = 0.0
    for p, q in ((1, 1), (2, 0), (0, 2)):
        dev = 0.0
        for seed in range(3):
            conn, loop, V = _gauge_scene(seed, p, q)
            gauged = gauge_transform(conn, V)
            dev = max(dev, _worst(wilson_trace(loop, conn, H).coeffs, wilson_trace(loop, gauged, H).coeffs))
            s_dev = _worst(wilson_supertrace(loop, conn, H).coeffs, wilson_supertrace(loop, gauged, H).coeffs)
            super_worst = max(super_worst, s_dev)
        worst[(p, q)] = dev
    elapsed = time.perf_counter() - t0
    dev = max(worst.values())
    detail = ", ".join(f"rank ({p}|{q}): {v:.1e}" for (p, q), v in worst.items())
    ok = report(
        2,
        "tr P = tr P~ under a random gauge, 4-vertex super loop",
        dev <= 1e-8 and elapsed < 10.0,
        f"{detail}; supertrace: {super_worst:.1e}; {elapsed:.2f}s",
    )
    assert ok


# ---------------------------------------------------------------- 3, 4

def _random_scenes(count=20):
    for seed in range(count):
        rng = np.random.default_rng(1000 + seed)
        n, m = int(rng.integers(1, 3)), int(rng.integers(0, 3))
        p, q = int(rng.integers(0, 3)), int(rng.integers(0, 2))
        if p + q == 0:
            p = 1
        L = int(rng.integers(0, 3))
        conn = random_connection(rng, n, m, p, q, L=L, amp=0.5)
        pts = [random_spoint(rng, conn.chart, L) for _ in range(3)]
        yield conn, build_polygon(pts, closed=False)


@pytest.fixture(scope="module")
def scene_transports():
    out = []
    for conn, path in _random_scenes():
        P = parallel_transport(path, conn, H)
        out.append((conn, path, P))
    return out


def test_criterion_03_transport_algebra(report, scene_transports):
    inv, split = 0.0, 0.0
    for conn, path, P in scene_transports:
        Pinv = parallel_transport(path.inverse(), conn, H)
        ident = SuperMatrix.identity(conn.even_rank, conn.odd_rank, path.G)
        inv = max(inv, (Pinv.matrix @ P.matrix).max_abs_diff(ident))
        a = parallel_transport(path.restricted(0.0, 0.37), conn, H)
        b = parallel_transport(path.restricted(0.37, 1.0), conn, H)
        split = max(split, transport_concat(b, a).matrix.max_abs_diff(P.matrix))
    ok = report(3, "inverse and split-at-0.37 on 20 scenes", inv <= 1e-9 and split <= 1e-9, f"inverse {inv:.1e}, split {split:.1e}")
    assert ok


def test_criterion_04_body_consistency(report, scene_transports):
    worst = 0.0
    for conn, path, P in scene_transports:
        worst = max(worst, _worst(P.matrix.body(), body_transport(path, conn, H)))
    ok = report(4, "body of the transport equals the classical transport", worst <= 1e-10, f"{worst:.1e}")
    assert ok


# ---------------------------------------------------------------- 5

def test_criterion_05_series_oracle(report):
    rng = np.random.default_rng(55)
    base = random_connection(rng, 1, 1, 1, 1, L=2, amp=0.5)
    pts = [random_spoint(rng, base.chart, 2) for _ in range(3)]
    path = build_polygon(pts, closed=False)
    unit = path_B_norm(path, base)
    rows = []
    for level in (0.25, 0.5, 1.0, 1.5, 2.0):
        conn = ConnectionSpec(base.chart, 1, 1, base.gamma, level / unit)
        P = parallel_transport(path, conn, H)
        S = path_ordered_series(path, conn, 6, 512)
        rows.append((level, path_B_norm(path, conn), P.matrix.max_abs_diff(S.matrix)))
    ok = all(d <= 1e-6 for _, _, d in rows)
    detail = ", ".join(f"|B|={b:.2f}: {d:.1e}" for _, b, d in rows)
    ok = report(5, "RK4 vs 6-term series for |B| <= 2", ok, detail)
    assert ok


# ---------------------------------------------------------------- 6

def test_criterion_06_second_derivative_law(report):
    worst, slopes = 0.0, []
    s_vals = [0.1, 0.05, 0.025]
    for seed in range(3):
        rng = np.random.default_rng(600 + seed)
        conn = random_connection(rng, 1, 1, 1, 1, amp=0.5)
        G = 2
        a = random_spoint(rng, conn.chart, G)
        zero = GrassmannElement.zero(G)
        even = [GrassmannElement.scalar(1.0, G), zero]
        odd1 = [zero, GrassmannElement.generator(1, G)]
        odd2 = [zero, GrassmannElement.generator(2, G)]
        for u, v in ((even, odd1), (odd1, odd2), (odd2, even)):
            got = rect_second_derivative(conn, a, u, v, s_vals, H)
            want = contract_at(conn, a, v, u) * 2.0
            worst = max(worst, got.max_abs_diff(want) / want.norm())
        firsts = rect_first_differences(conn, a, even, odd1, s_vals, H)
        slopes.append(float(np.polyfit(np.log(s_vals), np.log(firsts), 1)[0]))
    # the exact asymptotic slope is 1; finite s shifts the fitted value by O(s)
    ok = report(
        6,
        "second s-derivative of the rectangle transport is 2R(v,u)",
        worst <= 1e-4 and min(slopes) >= 0.95,
        f"relative error {worst:.1e}; first-difference slopes {', '.join(f'{s:.3f}' for s in slopes)}",
    )
    assert ok


# ---------------------------------------------------------------- 7

def test_criterion_07_first_covariant_derivative(report):
    worst = 0.0
    for seed in range(3):
        rng = np.random.default_rng(700 + seed)
        conn = random_connection(rng, 1, 1, 1, 1, L=0, amp=0.5)
        G = 2
        x = random_spoint(rng, conn.chart, G)
        xi = [random_grassmann(rng, G, 0, 0.5), random_grassmann(rng, G, 1, 0.5)]
        fp = conn.frame_parities()
        Z = [random_sf(rng, 1, 1, 0, fp[a], 1.0, 3) for a in range(2)]
        lhs, rhs = transport_derivative_limit(conn, x, xi, Z, (1e-2, 5e-3, 2.5e-3), H)
        worst = max(worst, _worst(lhs, rhs))
    ok = report(7, "transport limit equals the pulled back covariant derivative", worst <= 1e-5, f"{worst:.1e}")
    assert ok


# ---------------------------------------------------------------- 8

def test_criterion_08_galaev_extraction(report):
    t0 = time.perf_counter()
    conn = mixed_connection()
    x0 = (0.0,)
    pts = [(0.0,), (0.35,), (-0.6,)]
    direct = galaev_generators_direct(conn, None, x0, 1, points=pts, opts=H)
    extracted = extract_all(conn, None, x0, 1, pts, H)
    by_key = {g.key: g for g in extracted}
    pair = max(_worst(g.matrix, by_key[g.key].matrix) for g in direct)
    rep = compare_spans(direct, extracted, 1e-6)
    elapsed = time.perf_counter() - t0
    ok = report(
        8,
        "extracted generators (r <= 1) equal the direct ones",
        pair <= 1e-6 and rep.agree and elapsed < 60.0,
        f"pairwise {pair:.1e}, span distance {rep.span_distance:.1e}, {len(direct)} generators, {elapsed:.2f}s",
    )
    assert ok


# ---------------------------------------------------------------- 9

def test_criterion_09_functor_naturality(report):
    rng = np.random.default_rng(900)
    conn = random_connection(rng, 1, 1, 1, 1, L=2, amp=0.5)
    pts = [random_spoint(rng, conn.chart, 2) for _ in range(3)]
    path = build_polygon(pts, closed=False)
    P = parallel_transport(path, conn, H)
    worst = 0.0
    for _ in range(10):
        Gt = int(rng.integers(2, 5))
        images = [random_grassmann(rng, Gt, 1, 0.7) for _ in range(2)]
        moved = parallel_transport(path.substitute_eta(images), conn.substitute_eta(images), H)
        worst = max(worst, base_change(P, images).matrix.max_abs_diff(moved.matrix))
    ok = report(9, "base change of a transport equals the transport of the base-changed path", worst <= 1e-9, f"{worst:.1e}")
    assert ok


# ---------------------------------------------------------------- 10

def test_criterion_10_holonomy_principle(report):
    rng = np.random.default_rng(1010)
    chart = ChartSpec(2, 1, 2)
    flat = ConnectionSpec.flat(chart, 1, 1)
    V = random_gauge(rng, chart, 1, 1)
    const = [SuperFunction.constant(Const(1.3), 2, 1, 2), SuperFunction(2, 1, 2, {0b01: Const(0.5)})]
    X = [V[a][0] * const[0] + V[a][1] * const[1] for a in range(2)]
    x = random_spoint(rng, chart, 2)
    rep = verify_parallel_invariance(gauge_transform(flat, V), X, x, num_loops=16, seed=10, opts=H)
    ok = report(
        10,
        "holonomy fixes a parallel section",
        rep.max_deviation <= 1e-8 and len(rep.loop_deviations) == 16,
        f"{len(rep.loop_deviations)} loops, max deviation {rep.max_deviation:.1e}, residual {rep.residual:.1e}",
    )
    assert ok


# ---------------------------------------------------------------- 11

def _random_expr(rng, depth=0):
    choice = int(rng.integers(6 if depth < 3 else 2))
    if choice == 0:
        return Const(float(np.round(rng.uniform(-5, 5), int(rng.integers(0, 4)))))
    if choice == 1:
        return Var(f"x{int(rng.integers(1, 3))}")
    if choice == 2:
        return add(_random_expr(rng, depth + 1), _random_expr(rng, depth + 1))
    if choice == 3:
        return mul(_random_expr(rng, depth + 1), _random_expr(rng, depth + 1))
    if choice == 4:
        return power(_random_expr(rng, depth + 1), int(rng.integers(2, 4)))
    return func(["sin", "cos", "exp", "tanh"][int(rng.integers(4))], _random_expr(rng, depth + 1))


def _random_function(rng):
    while True:
        terms = {}
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(int(rng.integers(1, 4))):
                terms[int(rng.integers(1 << 4))] = _random_expr(rng)
        f = SuperFunction(2, 2, 2, terms)
        # constant folding can overflow; such functions have no finite text form
        if "inf" not in sf_print(f) and "nan" not in sf_print(f):
            return f


def test_criterion_11_algebra_and_dsl(report):
    rng = np.random.default_rng(1111)
    G = 5
    assoc = comm = anti = nil = True
    for _ in range(10_000):
        a, b, c = (random_grassmann(rng, G, integer=True) for _ in range(3))
        assoc &= (a * b) * c == a * (b * c)
        pa, pb = int(rng.integers(2)), int(rng.integers(2))
        x, y = random_grassmann(rng, G, pa, integer=True), random_grassmann(rng, G, pb, integer=True)
        comm &= x * y == y * x * (-1 if pa * pb else 1)
        i, j = rng.choice(np.arange(1, G + 1), 2, replace=False)
        anti &= a.eta_derivative(int(i)).eta_derivative(int(j)) == -a.eta_derivative(int(j)).eta_derivative(int(i))
        o = random_grassmann(rng, G, 1, integer=True)
        nil &= (o * o).is_zero() and (a.soul ** (G + 1)).is_zero()

    ctx = VarContext(2, 2, 2)
    trips = 0
    for _ in range(1_000):
        f = _random_function(rng)
        trips += parse_superfunction(sf_print(f), ctx) == f

    fd = 0.0
    for _ in range(50):
        f = _random_function(rng)
        df = sf_partial(f, "x1")
        pt = rng.uniform(-0.8, 0.8, 2)
        h = 1e-4

        def at(x1):
            with np.errstate(all="ignore"):
                return sf_pullback(f, {"x1": x1, "x2": pt[1], "th1": 0.0, "th2": 0.0}, 2).coeffs

        approx = (-at(pt[0] + 2 * h) + 8 * at(pt[0] + h) - 8 * at(pt[0] - h) + at(pt[0] - 2 * h)) / (12 * h)
        exact = sf_pullback(df, {"x1": pt[0], "x2": pt[1], "th1": 0.0, "th2": 0.0}, 2).coeffs
        if np.all(np.isfinite(exact)) and np.max(np.abs(exact)) < 1e6:
            fd = max(fd, float(np.max(np.abs(approx - exact) / (1.0 + np.abs(exact)))))
    ok = report(
        11,
        "Grassmann laws, parse/print round trip, symbolic d/dx",
        assoc and comm and anti and nil and trips == 1_000 and fd <= 1e-6,
        f"assoc {assoc}, supercomm {comm}, d-anticomm {anti}, nilpotent {nil}; round trips {trips}/1000; d/dx {fd:.1e}",
    )
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))

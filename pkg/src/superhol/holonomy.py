"""Holonomy algebras: curvature generators, Lie closure, base change and derivative checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .algebra import GrassmannElement, SuperMatrix, sm_supercommutator, substitution_matrix, tables
from .errors import DimensionError, ParityError, PreconditionError
from .geometry import ChartSpec, ConnectionSpec, curvature_frame, sfm_is_zero, sfm_pullback_array
from .superexpr import Const, SuperFunction, Var, pullback_array, sf_partial
from .transport import (
    GaugedConnection,
    Segment,
    SPath,
    SPoint,
    TransportOperator,
    TransportOptions,
    _coord_split,
    build_polygon,
    build_straight_line,
    check_even_tangent,
    parallel_transport,
    transport_inverse,
)

RANK_TOL = 1e-9


def _sgn(e: int) -> int:
    return -1 if e % 2 else 1


# ------------------------------------------------------------- curvature at a point

def curvature_at(conn: ConnectionSpec, point: SPoint) -> dict:
    """All curvature matrices R(d_i, d_j) evaluated at an S-point."""
    if isinstance(conn, GaugedConnection):
        raise TypeError("curvature needs a connection with symbolic coefficients")
    xs, ths = _coord_split(conn.chart, point.array())
    out = {}
    for i in range(conn.chart.dim):
        for j in range(conn.chart.dim):
            R = curvature_frame(conn, i, j)
            if sfm_is_zero(R):
                continue
            out[(i, j)] = SuperMatrix(conn.even_rank, conn.odd_rank, point.G, sfm_pullback_array(R, xs, ths, point.G))
    return out


def contract_at(conn: ConnectionSpec, point: SPoint, u: Sequence[GrassmannElement], v: Sequence[GrassmannElement], curv=None) -> SuperMatrix:
    """R_y(u, v) for tangent vectors given by right components at the point."""
    chart = conn.chart
    curv = curv if curv is not None else curvature_at(conn, point)
    out = SuperMatrix.zeros(conn.even_rank, conn.odd_rank, point.G)
    for (i, j), R in curv.items():
        for a in (u[i].even_part(), u[i].odd_part()):
            if a.is_zero():
                continue
            for b in (v[j].even_part(), v[j].odd_part()):
                if b.is_zero():
                    continue
                pa, pb = a.parity(), b.parity()
                pi, pj = chart.parity(i), chart.parity(j)
                sign = _sgn(pi * pa + pj * pb + pi * pb)
                out = out + R.scale(a * b * sign)
    return out


def ambrose_singer_generator(
    conn: ConnectionSpec,
    x: SPoint,
    path: SPath,
    u: Sequence[GrassmannElement],
    v: Sequence[GrassmannElement],
    opts: TransportOptions | None = None,
    transport: TransportOperator | None = None,
) -> SuperMatrix:
    """P^-1 o R_y(u, v) o P with P the transport along ``path`` from x to y."""
    chart = conn.chart
    check_even_tangent(chart, u)
    check_even_tangent(chart, v)
    if not path.start().allclose(x):
        raise DimensionError("path does not start at x")
    y = path.end()
    P = transport if transport is not None else parallel_transport(path, conn, opts)
    R = contract_at(conn, y, u, v)
    Pinv = transport_inverse(P).matrix
    return Pinv @ R @ P.matrix


# -------------------------------------------------------------------- Lie closure

@dataclass(frozen=True, eq=False)
class HolonomyBasis:
    generators: list
    basis: list
    rank: int
    closure_rounds: int
    tolerance: float
    shape: tuple = ()  # (p, q, G)

    def to_json(self) -> dict:
        return {
            "rank": self.rank,
            "basis": [_matrix_json(m) for m in self.basis],
            "closure_rounds": self.closure_rounds,
            "tolerance": self.tolerance,
        }


def _matrix_json(m: SuperMatrix) -> list:
    from .algebra import element_text

    return [[element_text(m.data[a, b], m.G) for b in range(m.size)] for a in range(m.size)]


def _rref(rows: np.ndarray, tol: float) -> np.ndarray:
    """Reduced row echelon form with partial pivoting; drops negligible rows."""
    A = rows.astype(float).copy()
    nrow, ncol = A.shape
    r = 0
    for c in range(ncol):
        if r == nrow:
            break
        piv = r + int(np.argmax(np.abs(A[r:, c])))
        if abs(A[piv, c]) <= tol:
            A[r:, c] = 0.0
            continue
        A[[r, piv]] = A[[piv, r]]
        A[r] /= A[r, c]
        others = np.arange(nrow) != r
        A[others] -= np.outer(A[others, c], A[r])
        r += 1
    return A[:r]


def _reduce(vectors: np.ndarray, tol: float) -> tuple[np.ndarray, int]:
    if vectors.size == 0:
        return vectors.reshape(0, vectors.shape[-1] if vectors.ndim == 2 else 0), 0
    s = np.linalg.svd(vectors, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((0, vectors.shape[1])), 0
    rank = int(np.sum(s > tol * s[0]))
    _, _, vt = np.linalg.svd(vectors, full_matrices=False)
    basis = _rref(vt[:rank], 1e-12)
    return basis, rank


def _even_slots(m: SuperMatrix) -> np.ndarray:
    pc = tables(m.G).popcount % 2
    ip = np.asarray(m.index_parities)
    return ((pc[None, None, :] + ip[:, None, None] + ip[None, :, None]) % 2 == 0).astype(float)


def lie_closure(generators: Sequence[SuperMatrix], tol: float = RANK_TOL, max_rounds: int = 50) -> HolonomyBasis:
    """Real basis of the Lie algebra generated by even matrices under supercommutators."""
    gens = list(generators)
    if not gens:
        return HolonomyBasis([], [], 0, 0, tol)
    p, q, G = gens[0].p, gens[0].q, gens[0].G
    shape = gens[0].data.shape
    for g in gens:
        if g.data.shape != shape:
            raise DimensionError("generators differ in shape")
        if not g.is_even():
            raise ParityError("holonomy generators must be even")
    even = _even_slots(gens[0]).ravel()
    stack = np.stack([g.data.ravel() for g in gens])
    basis, rank = _reduce(stack, tol)
    basis = basis * even  # rounding must not leak into odd slots
    rounds = 0
    while rank > 0 and rounds < max_rounds:
        rounds += 1
        mats = [SuperMatrix(p, q, G, b.reshape(shape)) for b in basis]
        brackets = []
        for i in range(len(mats)):
            for j in range(i + 1, len(mats)):
                brackets.append(sm_supercommutator(mats[i], mats[j]).data.ravel())
        if not brackets:
            break
        combined = np.vstack([stack, np.array(brackets)])
        new_basis, new_rank = _reduce(combined, tol)
        if new_rank <= rank:
            break
        stack, basis, rank = combined, new_basis * even, new_rank
    return HolonomyBasis(gens, [SuperMatrix(p, q, G, b.reshape(shape)) for b in basis], rank, rounds, tol, (p, q, G))


# ----------------------------------------------------------------------- sampling

@dataclass(frozen=True)
class SamplingConfig:
    num_points: int = 4
    num_tangents: int = 4
    seed: int = 42
    box: tuple = ()  # per even coordinate (lo, hi); default (-1, 1)
    soul_scale: float = 0.5

    def bounds(self, n: int) -> list:
        if self.box:
            if len(self.box) != n:
                raise DimensionError("sampling box needs one interval per even coordinate")
            return [tuple(b) for b in self.box]
        return [(-1.0, 1.0)] * n


def _random_monomial(rng: np.random.Generator, G: int, parity: int, allow_empty: bool) -> GrassmannElement | None:
    subsets = [m for m in range(1 << G) if bin(m).count("1") % 2 == parity and (m or allow_empty)]
    if not subsets:
        return None
    mask = subsets[int(rng.integers(len(subsets)))]
    coeff = float(rng.uniform(0.5, 1.5)) * (1 if rng.random() < 0.5 else -1)
    out = np.zeros(1 << G)
    out[mask] = coeff
    return GrassmannElement(G, out)


def random_point(rng: np.random.Generator, chart: ChartSpec, G: int, cfg: SamplingConfig) -> SPoint:
    coords = []
    for l, (lo, hi) in enumerate(cfg.bounds(chart.even_dim)):
        c = GrassmannElement.scalar(float(rng.uniform(lo, hi)), G)
        s = _random_monomial(rng, G, 0, False)
        if s is not None:
            c = c + s * cfg.soul_scale
        coords.append(c)
    for _ in range(chart.odd_dim):
        s = _random_monomial(rng, G, 1, False)
        coords.append(s * cfg.soul_scale if s is not None else GrassmannElement.zero(G))
    return SPoint(chart, tuple(coords))


def random_even_tangent(rng: np.random.Generator, chart: ChartSpec, G: int) -> list[GrassmannElement]:
    """A coordinate direction weighted by an eta-monomial of matching parity."""
    comps = [GrassmannElement.zero(G) for _ in range(chart.dim)]
    if chart.dim == 0:
        return comps
    i = int(rng.integers(chart.dim))
    w = _random_monomial(rng, G, chart.parity(i), True)
    if w is not None:
        comps[i] = w
    return comps


def sample_holonomy_algebra(
    conn: ConnectionSpec,
    x: SPoint,
    extra_generators: int,
    sampling: SamplingConfig | None = None,
    opts: TransportOptions | None = None,
    tol: float = RANK_TOL,
) -> HolonomyBasis:
    """Ambrose-Singer generators at sampled (y, path, u, v), closed under brackets.

    The Grassmann algebra is enlarged by ``extra_generators``; all random
    choices come from one seeded generator, so results are reproducible.
    """
    cfg = sampling or SamplingConfig()
    if extra_generators < 0:
        raise DimensionError("extra generators must be >= 0")
    chart = conn.chart
    G = x.G + extra_generators
    xT = x.with_generators(G)
    rng = np.random.default_rng(cfg.seed)
    gens = []
    targets = [xT] + [random_point(rng, chart, G, cfg) for _ in range(max(cfg.num_points - 1, 0))]
    for y in targets:
        path = build_straight_line(xT, y)
        P = parallel_transport(path, conn, opts)
        curv = curvature_at(conn, y)
        Pinv = transport_inverse(P).matrix
        for _ in range(cfg.num_tangents):
            u = random_even_tangent(rng, chart, G)
            v = random_even_tangent(rng, chart, G)
            R = contract_at(conn, y, u, v, curv)
            gens.append(Pinv @ R @ P.matrix)
    return lie_closure(gens, tol)


# ------------------------------------------------------------------- base change

def base_change(obj, images: Sequence[GrassmannElement]):
    """Apply the algebra morphism eta_i -> images[i-1] to every Grassmann coefficient."""
    if not images:
        raise DimensionError("need at least one image")
    Gt = images[0].G
    sub = substitution_matrix(images, Gt)
    if isinstance(obj, GrassmannElement):
        if obj.G != len(images):
            raise DimensionError("one image per generator is required")
        return GrassmannElement(Gt, obj.coeffs @ sub)
    if isinstance(obj, SuperMatrix):
        if obj.G != len(images):
            raise DimensionError("one image per generator is required")
        return obj.map_coefficients(sub, Gt)
    if isinstance(obj, TransportOperator):
        return TransportOperator(base_change(obj.matrix, images), None, None, dict(obj.meta))
    if isinstance(obj, HolonomyBasis):
        mats = [base_change(m, images) for m in obj.basis]
        return lie_closure(mats, obj.tolerance) if mats else HolonomyBasis([], [], 0, 0, obj.tolerance)
    raise TypeError(f"cannot change base of {type(obj).__name__}")


def base_change_point(x: SPoint, images: Sequence[GrassmannElement]) -> SPoint:
    return SPoint(x.chart, tuple(base_change(c, images) for c in x.coords))


# ----------------------------------------------------------- rectangle homotopy

@dataclass(frozen=True, eq=False)
class RectangleHomotopy:
    """Xi_s = f o g_0(s, .) with f#(xi^i) = a#(xi^i) + (-1)^{|xi^i|}(u^i X + v^i Y)."""

    a: SPoint
    u: tuple
    v: tuple

    def loop(self, s: float) -> SPath:
        chart, G = self.a.chart, self.a.G
        t = Var("t")
        from .superexpr import add, mul

        s = float(s)
        pieces = [
            (0.0, 0.25, mul(Const(4 * s), t), Const(0.0)),
            (0.25, 0.5, Const(s), add(mul(Const(4 * s), t), Const(-s))),
            (0.5, 0.75, add(Const(3 * s), mul(Const(-4 * s), t)), Const(s)),
            (0.75, 1.0, Const(0.0), add(Const(4 * s), mul(Const(-4 * s), t))),
        ]
        segs = []
        for t0, t1, X, Y in pieces:
            comps = []
            for l in range(chart.dim):
                sg = _sgn(chart.parity(l))
                base = SuperFunction.from_grassmann(self.a.coords[l], 0, 0)
                fu = SuperFunction.from_grassmann(self.u[l] * sg, 0, 0) * SuperFunction.constant(X, 0, 0, G)
                fv = SuperFunction.from_grassmann(self.v[l] * sg, 0, 0) * SuperFunction.constant(Y, 0, 0, G)
                comps.append(base + fu + fv)
            segs.append(Segment(t0, t1, tuple(comps)))
        return SPath(chart, G, tuple(segs))


def richardson_to_zero(s_values: Sequence[float], values: Sequence[np.ndarray]) -> np.ndarray:
    """Polynomial extrapolation of values(s) to s = 0 (Neville's scheme)."""
    s = [float(v) for v in s_values]
    tab = [np.asarray(v, dtype=float) for v in values]
    n = len(s)
    for k in range(1, n):
        tab = [(s[i + k] * tab[i] - s[i] * tab[i + 1]) / (s[i + k] - s[i]) for i in range(n - k)]
    return tab[0]


def rect_transports(conn, a: SPoint, u, v, s_values, opts: TransportOptions | None = None) -> dict:
    rh = RectangleHomotopy(a, tuple(u), tuple(v))
    out = {}
    for s in s_values:
        for ss in (s, 2 * s):
            if ss not in out:
                out[ss] = parallel_transport(rh.loop(ss), conn, opts).matrix
    return out


def rect_second_derivative(
    conn,
    a: SPoint,
    u: Sequence[GrassmannElement],
    v: Sequence[GrassmannElement],
    s_values: Sequence[float] = (0.1, 0.05, 0.025),
    opts: TransportOptions | None = None,
) -> SuperMatrix:
    """Richardson-extrapolated (P_2s - 2 P_s + 1) / s^2 along the rectangle homotopy."""
    s_values = [float(s) for s in s_values]
    if any(s <= 0 for s in s_values) or any(b >= a_ for a_, b in zip(s_values, s_values[1:])):
        raise ValueError("s values must be positive and decreasing")
    check_even_tangent(a.chart, u)
    check_even_tangent(a.chart, v)
    Ps = rect_transports(conn, a, u, v, s_values, opts)
    I = SuperMatrix.identity(conn.even_rank, conn.odd_rank, a.G).data
    diffs = [(Ps[2 * s].data - 2 * Ps[s].data + I) / s**2 for s in s_values]
    return SuperMatrix(conn.even_rank, conn.odd_rank, a.G, richardson_to_zero(s_values, diffs))


def rect_first_differences(conn, a, u, v, s_values, opts=None) -> list[float]:
    """Norms of (P_s - 1) / s, which must vanish linearly in s."""
    I = SuperMatrix.identity(conn.even_rank, conn.odd_rank, a.G).data
    rh = RectangleHomotopy(a, tuple(u), tuple(v))
    out = []
    for s in s_values:
        P = parallel_transport(rh.loop(s), conn, opts).matrix
        out.append(float(np.max(np.abs((P.data - I) / s))))
    return out


# ---------------------------------------------------------------- parallel sections

@dataclass
class InvarianceReport:
    residual: float
    loop_deviations: list = field(default_factory=list)
    open_deviations: list = field(default_factory=list)
    tolerance: float = 1e-8

    @property
    def max_deviation(self) -> float:
        return max(self.loop_deviations + self.open_deviations + [0.0])

    @property
    def ok(self) -> bool:
        return self.max_deviation <= self.tolerance

    def to_json(self) -> dict:
        return {
            "residual": self.residual,
            "max_loop_deviation": max(self.loop_deviations + [0.0]),
            "max_open_deviation": max(self.open_deviations + [0.0]),
            "loops": len(self.loop_deviations),
            "tolerance": self.tolerance,
            "ok": self.ok,
        }


def section_at(X: Sequence[SuperFunction], point: SPoint) -> np.ndarray:
    xs, ths = _coord_split(point.chart, point.array())
    return np.stack([pullback_array(f, xs, ths, point.G) for f in X])


def section_residual(conn, X: Sequence[SuperFunction], points: Sequence[SPoint]) -> float:
    """Largest coefficient of nabla_l X over coordinates l and sample points."""
    chart = conn.chart
    worst = 0.0
    from .algebra import gmatmul_array

    for pt in points:
        G = pt.G
        xs, ths = _coord_split(chart, pt.array())
        gam = conn.evaluate(xs, ths, G)
        Xv = section_at(X, pt)[:, None, :]  # (r, 1, D)
        for l in range(chart.dim):
            sg = np.array(conn.sigma(l), dtype=float)
            dX = np.stack([pullback_array(sf_partial(f, chart.name(l)), xs, ths, G) for f in X])
            res = sg[:, None] * dX + gmatmul_array(gam[l], Xv, G)[:, 0, :]
            worst = max(worst, float(np.max(np.abs(res))) if res.size else 0.0)
    return worst


def verify_parallel_invariance(
    conn,
    X: Sequence[SuperFunction],
    x: SPoint,
    loops: Sequence[SPath] | None = None,
    num_loops: int = 16,
    seed: int = 42,
    opts: TransportOptions | None = None,
    tol: float = 1e-8,
    residual_points: int = 8,
) -> InvarianceReport:
    """Check that holonomy fixes x*X and that P_gamma(X_x) = y*X along open paths."""
    chart = conn.chart
    rng = np.random.default_rng(seed)
    cfg = SamplingConfig(seed=seed)
    probe = [x] + [random_point(rng, chart, x.G, cfg) for _ in range(residual_points - 1)]
    res = section_residual(conn, X, probe)
    if res > tol:
        raise PreconditionError(f"section is not parallel: residual {res:.3e} exceeds {tol:.1e}")
    Xx = section_at(X, x)[:, None, :]
    rep = InvarianceReport(res, tolerance=tol)
    if loops is None:
        loops = []
        for _ in range(num_loops):
            k = int(rng.integers(2, 4))
            pts = [x] + [random_point(rng, chart, x.G, cfg) for _ in range(k)]
            loops.append(build_polygon(pts, closed=True))
    from .algebra import gmatmul_array

    for loop in loops:
        P = parallel_transport(loop, conn, opts).matrix
        moved = gmatmul_array(P.data, Xx, x.G)
        rep.loop_deviations.append(float(np.max(np.abs(moved - Xx))))
        y = loop.point_at(0.5)
        half = loop.restricted(0.0, 0.5)
        Ph = parallel_transport(half, conn, opts).matrix
        moved = gmatmul_array(Ph.data, Xx, x.G)
        Xy = section_at(X, y)[:, None, :]
        rep.open_deviations.append(float(np.max(np.abs(moved - Xy))))
    return rep

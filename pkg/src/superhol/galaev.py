"""Generators of the holonomy algebra at a topological point, computed directly and
recovered as Grassmann coefficients of elements of the S-point holonomy algebra."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .algebra import GrassmannElement, SuperMatrix, gmatmul_array
from .errors import DimensionError, ParityError, PreconditionError, UnsupportedOrderError
from .geometry import (
    AuxConnectionSpec,
    ChartSpec,
    ConnectionSpec,
    VectorField,
    cov_deriv_curvature,
    sfm_is_zero,
    sfm_pullback_array,
)
from .holonomy import RANK_TOL, SamplingConfig, contract_at, richardson_to_zero, section_at
from .superexpr import SuperFunction, pullback_array
from .transport import (
    SPoint,
    TransportOptions,
    body_transport,
    build_straight_line,
    build_velocity_path,
    check_even_tangent,
    parallel_transport,
    tangent_velocity,
)

MAX_ORDER = 2


def _sgn(e: int) -> int:
    return -1 if e % 2 else 1


@dataclass(frozen=True, eq=False)
class GalaevGenerator:
    """P0^-1 o (nabla^r_{derivs} R)(d_{args[0]}, d_{args[1]}) o P0 as a real matrix."""

    order: int
    derivs: tuple  # derivative directions, outermost first
    args: tuple  # (k2, k1): the curvature is evaluated on (d_k2, d_k1)
    matrix: np.ndarray
    y0: tuple
    x0: tuple
    method: str = "direct"
    multiindices: tuple = ()

    @property
    def key(self) -> tuple:
        return (self.y0, self.derivs, self.args)

    def to_json(self, chart: ChartSpec | None = None) -> dict:
        name = chart.name if chart is not None else str
        out = {
            "order": self.order,
            "derivs": [name(k) for k in self.derivs],
            "args": [name(k) for k in self.args],
            "y0": list(self.y0),
            "path": {"kind": "straight", "from": list(self.x0), "to": list(self.y0)},
            "matrix": [[float(v) for v in row] for row in self.matrix],
        }
        if self.multiindices:
            out["multiindices"] = [list(I) for I in self.multiindices]
        return out


def _check_order(r: int):
    if r < 0:
        raise ValueError(f"order must be >= 0, got {r}")
    if r > MAX_ORDER:
        raise UnsupportedOrderError(f"derivative order {r} is not supported (max {MAX_ORDER})")


def _real_coords(chart: ChartSpec, q) -> tuple:
    q = tuple(float(v) for v in q)
    if len(q) != chart.even_dim:
        raise DimensionError(f"expected {chart.even_dim} even coordinates, got {len(q)}")
    return q


# ------------------------------------------------------------------ the T-point

def galaev_point(chart: ChartSpec, q, G: int | None = None) -> SPoint:
    """The point with x^k -> q^k and theta^i -> eta^i over G generators."""
    q = _real_coords(chart, q)
    m = chart.odd_dim
    G = m if G is None else G
    if G < m:
        raise PreconditionError(f"need at least {m} generators to host every odd coordinate, got {G}")
    coords = [GrassmannElement.scalar(v, G) for v in q]
    coords += [GrassmannElement.generator(i + 1, G) for i in range(m)]
    return SPoint(chart, tuple(coords))


def galaev_pullback(f: SuperFunction) -> SuperFunction:
    """Pull back along the T-point: theta^i becomes eta^i, even coordinates stay symbolic.

    Only defined for functions without eta dependence.
    """
    if f.num_eta:
        if any(f.split_mask(m)[0] for m in f.terms):
            raise PreconditionError("function already depends on eta")
    out = {}
    for mask, c in f.terms.items():
        _, th = f.split_mask(mask)
        out[th] = c
    return SuperFunction(f.num_x, 0, f.num_theta, out)


# --------------------------------------------------------------- direct route

def _sample_bodies(chart: ChartSpec, x0: tuple, sampling: SamplingConfig) -> list[tuple]:
    n = chart.even_dim
    if n == 0:
        return [()]
    rng = np.random.default_rng(sampling.seed)
    bounds = sampling.bounds(n)
    out = [x0]
    for _ in range(max(0, sampling.num_points - 1)):
        out.append(tuple(float(rng.uniform(lo, hi)) for lo, hi in bounds))
    return out


def _direction_sets(chart: ChartSpec, r: int):
    dim = chart.dim
    for derivs in itertools.product(range(dim), repeat=r):
        for k2 in range(dim):
            for k1 in range(k2, dim):
                if k1 == k2 and chart.parity(k1) == 0:
                    continue
                yield derivs, (k2, k1)


def _eval_body(A, chart: ChartSpec, y0: tuple) -> np.ndarray:
    xs = [np.array([[v]]) for v in y0]
    ths = [np.zeros((1, 1)) for _ in range(chart.odd_dim)]
    return sfm_pullback_array(A, xs, ths, 0)[0, :, :, 0]


def galaev_generators_direct(
    conn: ConnectionSpec,
    aux: AuxConnectionSpec | None,
    x0,
    r_max: int,
    sampling: SamplingConfig | None = None,
    points: Sequence | None = None,
    opts: TransportOptions | None = None,
) -> list[GalaevGenerator]:
    """Symbolic covariant derivatives of the curvature read at sampled body points y0,
    conjugated by the classical transport along the straight line x0 -> y0.

    Derivatives whose symbolic matrix vanishes identically are skipped, so a flat
    connection gives an empty list.  Only (k2, k1) with k2 <= k1 are listed since
    the other order spans the same line.
    """
    _check_order(r_max)
    chart = conn.chart
    if chart.total_generators:
        raise PreconditionError("the direct route needs a scene without Grassmann generators")
    x0 = _real_coords(chart, x0)
    if points is None:
        points = _sample_bodies(chart, x0, sampling or SamplingConfig())
    points = [_real_coords(chart, y) for y in points]
    symbolic = []
    for r in range(r_max + 1):
        for derivs, (k2, k1) in _direction_sets(chart, r):
            dirs = [VectorField.coordinate(chart, k) for k in derivs]
            A = cov_deriv_curvature(conn, aux, dirs, VectorField.coordinate(chart, k2), VectorField.coordinate(chart, k1))
            if not sfm_is_zero(A):
                symbolic.append((r, derivs, (k2, k1), A))
    out = []
    bopts = opts or TransportOptions(estimate_error=False)
    for y0 in points:
        line = build_straight_line(SPoint.from_real(chart, x0, 0), SPoint.from_real(chart, y0, 0))
        P0 = body_transport(line, conn, bopts)
        P0inv = np.linalg.inv(P0)
        for r, derivs, args, A in symbolic:
            M = P0inv @ _eval_body(A, chart, y0) @ P0
            out.append(GalaevGenerator(r, tuple(derivs), args, M, y0, x0))
    return out


# ------------------------------------------------- first-order transport limit

def transport_derivative_limit(
    conn: ConnectionSpec,
    x: SPoint,
    xi: Sequence[GrassmannElement],
    Z: Sequence[SuperFunction],
    steps: Sequence[float] = (1e-2, 5e-3, 2.5e-3),
    opts: TransportOptions | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Both sides of d/dt|0 P_{[0,t]}^-1 (Z o gamma(t)) = nabla_xi Z at x.

    gamma is the straight line leaving x with tangent xi.  The left side is a
    forward difference extrapolated to zero step, the right side comes from
    the symbolic covariant derivative.  Both are arrays of shape (r, 2**G).
    """
    chart = conn.chart
    check_even_tangent(chart, xi)
    G = x.G
    vel = tangent_velocity(chart, xi)
    Zx = section_at(Z, x)
    values = []
    for h in steps:
        end = SPoint(chart, tuple(c + v * h for c, v in zip(x.coords, vel)))
        P = parallel_transport(build_straight_line(x, end), conn, opts or TransportOptions(estimate_error=False))
        back = gmatmul_array(P.matrix.inverse().data, section_at(Z, end)[:, None, :], G)[:, 0, :]
        values.append((back - Zx) / h)
    lhs = richardson_to_zero(list(steps), values)
    rhs = np.zeros_like(Zx)
    fp = conn.frame_parities()
    xs = [x.coords[k].coeffs for k in range(chart.even_dim)]
    ths = [x.coords[k].coeffs for k in range(chart.even_dim, chart.dim)]
    for l in range(chart.dim):
        if not np.any(vel[l].coeffs):
            continue
        col = conn.apply(l, list(Z))
        for m in range(conn.rank):
            val = GrassmannElement(G, pullback_array(col[m], xs, ths, G))
            rhs[m] += (vel[l] * val).coeffs * _sgn(chart.parity(l) * fp[m])
    return lhs, rhs


# ------------------------------------------------------------ extraction route

def allocate_multiindices(chart: ChartSpec, ks: Sequence[int], start: int = 0) -> list[tuple]:
    """Consecutive fresh blocks: one generator per odd direction, two per even one."""
    out = []
    nxt = start + 1
    for k in ks:
        size = 1 if chart.parity(k) else 2
        out.append(tuple(range(nxt, nxt + size)))
        nxt += size
    return out


def _check_multiindices(chart: ChartSpec, ks: Sequence[int], idx: Sequence[Sequence[int]]):
    if len(idx) != len(ks):
        raise DimensionError(f"need {len(ks)} multiindices, got {len(idx)}")
    seen: set = set()
    for k, I in zip(ks, idx):
        I = tuple(I)
        if not I or any(int(j) < 1 for j in I):
            raise PreconditionError(f"multiindex {I} must be a non-empty set of generator indices >= 1")
        if len(set(I)) != len(I):
            raise PreconditionError(f"multiindex {I} repeats a generator")
        if len(I) % 2 != chart.parity(k):
            raise ParityError(f"multiindex {I} has parity {len(I) % 2}, direction {chart.name(k)} has {chart.parity(k)}")
        if seen & set(I):
            raise PreconditionError(f"multiindices are not pairwise disjoint: {I} overlaps {sorted(seen)}")
        seen |= set(I)


def _embed(M: SuperMatrix, G: int) -> SuperMatrix:
    """View a matrix over fewer generators inside a larger Grassmann algebra."""
    if M.G == G:
        return M
    d = np.zeros(M.data.shape[:-1] + (1 << G,))
    d[..., : M.data.shape[-1]] = M.data
    return SuperMatrix(M.p, M.q, G, d)


def _direction(chart: ChartSpec, k: int, weight: GrassmannElement) -> list[GrassmannElement]:
    """Right components of weight * d_k."""
    G = weight.G
    comps = [GrassmannElement.zero(G) for _ in range(chart.dim)]
    comps[k] = weight * _sgn(chart.parity(k) * weight.parity())
    return comps


def _apply(P: SuperMatrix, comps: Sequence[GrassmannElement]) -> list[GrassmannElement]:
    out = []
    for a in range(P.size):
        acc = GrassmannElement.zero(P.G)
        for b in range(P.size):
            acc = acc + GrassmannElement(P.G, P.data[a, b]) * comps[b]
        out.append(acc)
    return out


class _Fiber:
    """Transport bookkeeping along a chain of velocity paths starting at the T-point."""

    # Along these paths the velocity carries a nilpotent weight w with w*w = 0,
    # so B(t) is constant with B @ B = 0 and one RK4 step is already exact.
    opts = TransportOptions(step=0.5, estimate_error=False)

    def __init__(self, conn, auxc):
        self.conn, self.auxc = conn, auxc

    def move(self, state, xi):
        point, P, Pbar = state
        path = build_velocity_path(point, xi)
        Pn = parallel_transport(path, self.conn, self.opts).matrix @ P
        Pbn = Pbar
        if self.auxc is not None:
            Pbn = parallel_transport(path, self.auxc, self.opts).matrix @ Pbar
        return path.end(), Pn, Pbn

    def aux_move(self, state, vec):
        return vec if self.auxc is None else _apply(state[2], vec)

    def value(self, state, u, v):
        point, P, Pbar = state
        R = contract_at(self.conn, point, self.aux_move(state, u), self.aux_move(state, v))
        return P.inverse() @ R @ P


def extract_generator(
    conn: ConnectionSpec,
    x0,
    q,
    args: tuple,
    derivs: tuple = (),
    multiindices: Sequence[Sequence[int]] | None = None,
    aux: AuxConnectionSpec | None = None,
    opts: TransportOptions | None = None,
) -> GalaevGenerator:
    """Recover a generator as the eta-coefficient of an element of the S-point holonomy algebra.

    ``multiindices`` are listed for k1, k2, k3, k4 in that order, where
    ``args = (k2, k1)`` and ``derivs = (k4, k3)`` (or ``(k3,)``).
    """
    chart = conn.chart
    r = len(derivs)
    _check_order(r)
    if chart.total_generators:
        raise PreconditionError("extraction needs a scene without Grassmann generators")
    x0 = _real_coords(chart, x0)
    q = _real_coords(chart, q)
    k2, k1 = args
    ks = [k1, k2] + list(reversed(derivs))
    for k in ks:
        if not 0 <= k < chart.dim:
            raise DimensionError(f"direction index {k} out of range")
    if multiindices is None:
        multiindices = allocate_multiindices(chart, ks)
    multiindices = [tuple(int(j) for j in I) for I in multiindices]
    _check_multiindices(chart, ks, multiindices)
    G = max([chart.odd_dim] + [max(I) for I in multiindices])
    opts = opts or TransportOptions(estimate_error=False)

    weights = [GrassmannElement.monomial(I, G) for I in multiindices]
    u = _direction(chart, k2, weights[1])
    v = _direction(chart, k1, weights[0])

    m = chart.odd_dim
    y_small = galaev_point(chart, q, m)
    gamma = build_straight_line(SPoint.from_real(chart, x0, m), y_small)
    Pg = _embed(parallel_transport(gamma, conn, opts).matrix, G)

    auxc = None
    if aux is not None and not aux.is_flat_data():
        auxc = ConnectionSpec(chart, chart.even_dim, chart.odd_dim, aux.gamma)
    fib = _Fiber(conn, auxc)
    y = galaev_point(chart, q, G)
    ident = SuperMatrix.identity(conn.even_rank, conn.odd_rank, G)
    ident_t = SuperMatrix.identity(chart.even_dim, chart.odd_dim, G)
    s00 = (y, ident, ident_t)

    if r == 0:
        E = fib.value(s00, u, v)
    elif r == 1:
        xi = _direction(chart, ks[2], weights[2])
        # nilpotent weights make the conjugated curvature affine in t
        E = fib.value(fib.move(s00, xi), u, v) - fib.value(s00, u, v)
    else:
        X = _direction(chart, ks[3], weights[3])
        Y = _direction(chart, ks[2], weights[2])
        s01 = fib.move(s00, X)
        s10 = fib.move(s00, Y)
        s11 = fib.move(s01, fib.aux_move(s01, Y))
        # affine in each parameter, so the mixed difference is the mixed derivative
        E = fib.value(s11, u, v) - fib.value(s10, u, v) - fib.value(s01, u, v) + fib.value(s00, u, v)

    E = Pg.inverse() @ E @ Pg
    for I in multiindices:
        for j in I:
            E = E.eta_derivative(j, operator=True)
    return GalaevGenerator(r, tuple(derivs), (k2, k1), E.body(), q, x0, "extracted", tuple(multiindices))


def extract_all(
    conn: ConnectionSpec,
    aux: AuxConnectionSpec | None,
    x0,
    r_max: int,
    points: Sequence,
    opts: TransportOptions | None = None,
) -> list[GalaevGenerator]:
    """Extraction for every direction set and every point, independent of the direct route."""
    _check_order(r_max)
    chart = conn.chart
    out = []
    for y0 in points:
        for r in range(r_max + 1):
            for derivs, args in _direction_sets(chart, r):
                out.append(extract_generator(conn, x0, y0, args, derivs, aux=aux, opts=opts))
    return out


# ---------------------------------------------------------------- comparison

@dataclass(frozen=True)
class SpanReport:
    direct_rank: int
    extracted_rank: int
    direct_in_extracted: float
    extracted_in_direct: float
    tol: float
    pairwise: float = float("nan")
    details: dict = field(default_factory=dict)

    @property
    def span_distance(self) -> float:
        return max(self.direct_in_extracted, self.extracted_in_direct)

    @property
    def agree(self) -> bool:
        return self.span_distance <= self.tol

    def to_json(self) -> dict:
        out = {
            "direct_rank": self.direct_rank,
            "extracted_rank": self.extracted_rank,
            "direct_in_extracted": self.direct_in_extracted,
            "extracted_in_direct": self.extracted_in_direct,
            "span_distance": self.span_distance,
            "tol": self.tol,
            "agree": self.agree,
        }
        if not np.isnan(self.pairwise):
            out["pairwise_max_diff"] = self.pairwise
        return out


def _as_matrix(g) -> np.ndarray:
    return np.asarray(g.matrix if isinstance(g, GalaevGenerator) else g, dtype=float)


def _orthonormal_span(vectors: np.ndarray, rank_tol: float) -> np.ndarray:
    if vectors.size == 0:
        return vectors.reshape(0, vectors.shape[-1] if vectors.ndim == 2 else 0)
    _, s, vt = np.linalg.svd(vectors, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return vt[:0]
    return vt[s > rank_tol * s[0]]


def _inclusion(vectors: np.ndarray, basis: np.ndarray) -> float:
    if vectors.shape[0] == 0:
        return 0.0
    if basis.shape[0] == 0:
        return float(np.max(np.linalg.norm(vectors, axis=1)))
    resid = vectors - (vectors @ basis.T) @ basis
    return float(np.max(np.linalg.norm(resid, axis=1)))


def compare_spans(direct: Sequence, extracted: Sequence, tol: float = 1e-6, rank_tol: float = RANK_TOL) -> SpanReport:
    """Mutual span inclusion measured by orthogonal projection residuals.

    Distances are relative to the largest Frobenius norm among all matrices.
    When both lists carry matching keys, the largest entrywise difference of
    paired generators is reported as well.
    """
    A = [_as_matrix(g) for g in direct]
    B = [_as_matrix(g) for g in extracted]
    shapes = {m.shape for m in A + B}
    if len(shapes) > 1:
        raise DimensionError(f"generators have different shapes: {sorted(shapes)}")
    width = next(iter(shapes))[0] ** 2 if shapes else 0
    Va = np.array([m.ravel() for m in A]).reshape(len(A), width)
    Vb = np.array([m.ravel() for m in B]).reshape(len(B), width)
    norms = [np.linalg.norm(v) for v in list(Va) + list(Vb)]
    scale = max(norms) if norms and max(norms) > 0 else 1.0
    Va, Vb = Va / scale, Vb / scale
    ba = _orthonormal_span(Va, rank_tol)
    bb = _orthonormal_span(Vb, rank_tol)
    pair = float("nan")
    if all(isinstance(g, GalaevGenerator) for g in list(direct) + list(extracted)):
        lookup = {g.key: g.matrix for g in extracted}
        diffs = [np.max(np.abs(g.matrix - lookup[g.key])) for g in direct if g.key in lookup]
        if diffs:
            pair = float(max(diffs))
    return SpanReport(ba.shape[0], bb.shape[0], _inclusion(Va, bb), _inclusion(Vb, ba), tol, pair)

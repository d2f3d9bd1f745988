"""S-points, S-paths, the parallelness equation and its solutions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_simpson

from .algebra import GrassmannElement, SuperMatrix, gmatmul_array, gmul_array, left_regular_array, sm_trace
from .errors import (
    DimensionError,
    EndpointMismatchError,
    NotInvertibleError,
    NumericFailure,
    ParityError,
    PreconditionError,
)
from .geometry import ChartSpec, ConnectionSpec, SFMatrix, sfm_pullback_array
from .superexpr import Const, SuperFunction, Var, add, mul, neg, sf_partial, substitute

CLOSURE_TOL = 1e-12


def _sgn(e: int) -> int:
    return -1 if e % 2 else 1


# ----------------------------------------------------------------- points

@dataclass(frozen=True, eq=False)
class SPoint:
    """Grassmann-valued coordinates (x1..xn | th1..thm) over 2**G monomials."""

    chart: ChartSpec
    coords: tuple  # of GrassmannElement

    def __post_init__(self):
        if len(self.coords) != self.chart.dim:
            raise DimensionError(f"point needs {self.chart.dim} coordinates, got {len(self.coords)}")
        Gs = {c.G for c in self.coords}
        if len(Gs) > 1:
            raise DimensionError("coordinates live in different Grassmann algebras")
        for l, c in enumerate(self.coords):
            par = c.parity()
            if c.is_zero():
                continue
            if par != self.chart.parity(l):
                raise ParityError(f"coordinate {self.chart.name(l)} must be {'even' if self.chart.parity(l) == 0 else 'odd'}")

    @property
    def G(self) -> int:
        return self.coords[0].G if self.coords else self.chart.total_generators

    @classmethod
    def from_real(cls, chart: ChartSpec, values: Sequence[float], G: int) -> "SPoint":
        coords = [GrassmannElement.scalar(float(v), G) for v in values]
        coords += [GrassmannElement.zero(G) for _ in range(chart.odd_dim)]
        return cls(chart, tuple(coords))

    def array(self) -> np.ndarray:
        return np.stack([c.coeffs for c in self.coords]) if self.coords else np.zeros((0, 1 << self.G))

    def body(self) -> np.ndarray:
        return np.array([c.body for c in self.coords[: self.chart.even_dim]])

    def allclose(self, other: "SPoint", atol: float = CLOSURE_TOL) -> bool:
        if self.chart.dim != other.chart.dim or self.G != other.G:
            return False
        return bool(np.allclose(self.array(), other.array(), rtol=0.0, atol=atol))

    def with_generators(self, G: int) -> "SPoint":
        """Same point viewed in a larger Grassmann algebra."""
        out = []
        for c in self.coords:
            a = np.zeros(1 << G)
            a[: c.coeffs.size] = c.coeffs
            out.append(GrassmannElement(G, a))
        return SPoint(self.chart, tuple(out))

    def text(self) -> list[str]:
        return [f"{self.chart.name(l)} = {c.text()}" for l, c in enumerate(self.coords)]


def tangent_velocity(chart: ChartSpec, comps: Sequence[GrassmannElement]) -> list[GrassmannElement]:
    """Coordinate velocities of an even tangent vector given by right components."""
    return [c * _sgn(chart.parity(l)) for l, c in enumerate(comps)]


def check_even_tangent(chart: ChartSpec, comps: Sequence[GrassmannElement]):
    if len(comps) != chart.dim:
        raise DimensionError("tangent vector needs one component per coordinate")
    for l, c in enumerate(comps):
        if not c.is_zero() and c.parity() != chart.parity(l):
            raise ParityError(
                f"tangent component along {chart.name(l)} has parity {c.parity()}; an even vector needs {chart.parity(l)}"
            )


# ------------------------------------------------------------------ paths

T = Var("t")


@dataclass(frozen=True, eq=False)
class Segment:
    t0: float
    t1: float
    comps: tuple  # SuperFunction in t per coordinate, shape (0, 0, G)

    def __post_init__(self):
        object.__setattr__(self, "_vel", tuple(sf_partial(c, "t") for c in self.comps))

    def positions(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.stack([_eval_t(c, t) for c in self.comps], axis=-2)

    def velocities(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.stack([_eval_t(c, t) for c in self._vel], axis=-2)


def _eval_t(f: SuperFunction, t: np.ndarray) -> np.ndarray:
    from .superexpr import pullback_array

    return pullback_array(f, [], [], f.num_eta, {"t": t}) * np.ones(t.shape + (1,))


@dataclass(frozen=True, eq=False)
class SPath:
    """Piecewise smooth path; each segment gives coordinates as functions of t."""

    chart: ChartSpec
    G: int
    segments: tuple
    name: str = ""

    def __post_init__(self):
        if not self.segments:
            raise DimensionError("a path needs at least one segment")
        if self.segments[0].t0 != 0.0 or self.segments[-1].t1 != 1.0:
            raise DimensionError("segments must cover [0, 1]")
        for a, b in zip(self.segments, self.segments[1:]):
            if a.t1 != b.t0:
                raise DimensionError("segments must be contiguous")
        for seg in self.segments:
            if not seg.t0 < seg.t1:
                raise DimensionError("segment intervals must be increasing")
            if len(seg.comps) != self.chart.dim:
                raise DimensionError("each segment needs one component per coordinate")
            for l, c in enumerate(seg.comps):
                if c.shape() != (0, 0, self.G):
                    raise DimensionError("segment components must be functions of t over the path's generators")
                if c.free_even_vars() - {"t"}:
                    raise DimensionError(f"segment component uses variables other than t: {c.text()}")
                par = c.parity()
                if not c.is_zero() and par != self.chart.parity(l):
                    raise ParityError(f"component {self.chart.name(l)} of the path has the wrong parity: {c.text()}")
        for a, b in zip(self.segments, self.segments[1:]):
            pa = a.positions(np.array(a.t1))
            pb = b.positions(np.array(b.t0))
            if not np.allclose(pa, pb, rtol=0.0, atol=CLOSURE_TOL):
                raise EndpointMismatchError(f"segments do not agree at the knot t={a.t1}")

    def point_at(self, t: float) -> SPoint:
        for seg in self.segments:
            if seg.t0 <= t <= seg.t1:
                arr = seg.positions(np.array(float(t)))
                return SPoint(self.chart, tuple(GrassmannElement(self.G, arr[l]) for l in range(self.chart.dim)))
        raise DimensionError(f"t={t} outside [0, 1]")

    def start(self) -> SPoint:
        return self.point_at(0.0)

    def end(self) -> SPoint:
        return self.point_at(1.0)

    def is_closed(self) -> bool:
        return self.start().allclose(self.end())

    def velocity_at(self, t: float) -> np.ndarray:
        for seg in self.segments:
            if seg.t0 <= t <= seg.t1:
                return seg.velocities(np.array(float(t)))
        raise DimensionError(f"t={t} outside [0, 1]")

    def inverse(self) -> "SPath":
        """The path run backwards, t -> 1 - t."""
        sub = {"t": add(Const(1.0), neg(T))}
        segs = []
        for seg in reversed(self.segments):
            comps = tuple(c.substitute_scalar(sub) for c in seg.comps)
            segs.append(Segment(1.0 - seg.t1, 1.0 - seg.t0, comps))
        return SPath(self.chart, self.G, tuple(segs), self.name + "^-1" if self.name else "")

    def restricted(self, a: float, b: float) -> "SPath":
        """gamma restricted to [a, b], reparametrized over [0, 1]."""
        if not 0.0 <= a < b <= 1.0:
            raise DimensionError("need 0 <= a < b <= 1")
        segs = []
        for seg in self.segments:
            lo, hi = max(seg.t0, a), min(seg.t1, b)
            if lo >= hi:
                continue
            sub = {"t": add(Const(a), mul(Const(b - a), T))}
            comps = tuple(c.substitute_scalar(sub) for c in seg.comps)
            segs.append(Segment((lo - a) / (b - a), (hi - a) / (b - a), comps))
        segs[0] = Segment(0.0, segs[0].t1, segs[0].comps)
        segs[-1] = Segment(segs[-1].t0, 1.0, segs[-1].comps)
        return SPath(self.chart, self.G, tuple(segs))

    def then(self, other: "SPath") -> "SPath":
        """Concatenation: run self on [0, 1/2], then other on [1/2, 1]."""
        if other.G != self.G:
            raise DimensionError("paths over different Grassmann algebras")
        if not self.end().allclose(other.start()):
            raise EndpointMismatchError("end point of the first path differs from the start of the second")
        segs = []
        for seg in self.segments:
            comps = tuple(c.substitute_scalar({"t": mul(Const(2.0), T)}) for c in seg.comps)
            segs.append(Segment(seg.t0 / 2, seg.t1 / 2, comps))
        for seg in other.segments:
            comps = tuple(c.substitute_scalar({"t": add(mul(Const(2.0), T), Const(-1.0))}) for c in seg.comps)
            segs.append(Segment(0.5 + seg.t0 / 2, 0.5 + seg.t1 / 2, comps))
        return SPath(self.chart, self.G, tuple(segs))

    def body(self) -> "SPath":
        """Underlying classical path: every nilpotent dropped."""
        segs = []
        for seg in self.segments:
            comps = tuple(SuperFunction(0, 0, 0, {0: c.body_expr()}) for c in seg.comps)
            segs.append(Segment(seg.t0, seg.t1, comps))
        return SPath(ChartSpec(self.chart.even_dim, self.chart.odd_dim, 0, 0), 0, tuple(segs))

    def substitute_eta(self, images: Sequence[GrassmannElement]) -> "SPath":
        """Path composed with the superpoint map sending eta_i to images[i]."""
        Gt = images[0].G if images else self.G
        segs = []
        for seg in self.segments:
            segs.append(Segment(seg.t0, seg.t1, tuple(c.substitute_eta(images) for c in seg.comps)))
        return SPath(self.chart, Gt, tuple(segs))

    def with_generators(self, G: int) -> "SPath":
        segs = [Segment(s.t0, s.t1, tuple(c.with_eta(G) for c in s.comps)) for s in self.segments]
        return SPath(self.chart, G, tuple(segs), self.name)

    def text(self) -> list:
        return [
            {"t": f"{s.t0!r}..{s.t1!r}", **{self.chart.name(l): c.text() for l, c in enumerate(s.comps)}}
            for s in self.segments
        ]


def _grassmann_sf(g: GrassmannElement) -> SuperFunction:
    return SuperFunction.from_grassmann(g, 0, 0)


def build_straight_line(a: SPoint, b: SPoint) -> SPath:
    """gamma#(xi) = a#(xi) - t (a#(xi) - b#(xi))."""
    if a.chart.dim != b.chart.dim or a.chart.even_dim != b.chart.even_dim:
        raise DimensionError("points on different charts")
    if a.G != b.G:
        raise DimensionError("points over different Grassmann algebras")
    comps = []
    for ca, cb in zip(a.coords, b.coords):
        fa = _grassmann_sf(ca)
        diff = _grassmann_sf(ca - cb)
        comps.append(fa - diff * SuperFunction.constant(T, 0, 0, a.G))
    return SPath(a.chart, a.G, (Segment(0.0, 1.0, tuple(comps)),))


def build_polygon(points: Sequence[SPoint], closed: bool = True) -> SPath:
    """Concatenated straight lines through the given points, equally spaced in t."""
    pts = list(points) + ([points[0]] if closed else [])
    k = len(pts) - 1
    if k < 1:
        raise DimensionError("need at least two points")
    segs = []
    for j in range(k):
        line = build_straight_line(pts[j], pts[j + 1]).segments[0]
        sub = {"t": add(mul(Const(float(k)), T), Const(-float(j)))}
        comps = tuple(c.substitute_scalar(sub) for c in line.comps)
        segs.append(Segment(j / k, (j + 1) / k if j + 1 < k else 1.0, comps))
    return SPath(points[0].chart, points[0].G, tuple(segs))


def build_velocity_path(x: SPoint, xi: Sequence[GrassmannElement]) -> SPath:
    """Exponential of t * xi applied to the coordinates of x.

    For a constant vector field the series stops after the linear term, so the
    path is gamma#(zeta^k) = x#(zeta^k) + t (-1)^{|zeta^k|} xi^k.
    """
    chart = x.chart
    check_even_tangent(chart, xi)
    for l, c in enumerate(xi):
        if c.body != 0.0:
            raise PreconditionError(f"tangent component along {chart.name(l)} is not nilpotent (body {c.body})")
    vel = tangent_velocity(chart, xi)
    comps = []
    for c0, v in zip(x.coords, vel):
        comps.append(_grassmann_sf(c0) + _grassmann_sf(v) * SuperFunction.constant(T, 0, 0, x.G))
    return SPath(chart, x.G, (Segment(0.0, 1.0, tuple(comps)),))


def constant_path(x: SPoint) -> SPath:
    return SPath(x.chart, x.G, (Segment(0.0, 1.0, tuple(_grassmann_sf(c) for c in x.coords)),))


# ------------------------------------------------------------ the B matrix

def _coord_split(chart: ChartSpec, arr: np.ndarray):
    n = chart.even_dim
    return [arr[..., l, :] for l in range(n)], [arr[..., l, :] for l in range(n, chart.dim)]


_B_CHUNK = 4_000_000


def segment_B(seg: Segment, conn, chart: ChartSpec, G: int, t: np.ndarray) -> np.ndarray:
    """B(t) on a grid, shape (len(t), r, r, 2**G)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    r = conn.rank
    D = 1 << G
    if chart.dim == 0:
        return np.zeros(t.shape + (r, r, D))
    chunk = max(1, _B_CHUNK // (3**G * r * r))
    if t.shape[0] > chunk:
        return np.concatenate([segment_B(seg, conn, chart, G, t[i:i + chunk]) for i in range(0, t.shape[0], chunk)])
    pos = seg.positions(t)
    vel = seg.velocities(t)
    xs, ths = _coord_split(chart, pos)
    gam = conn.evaluate(xs, ths, G)  # (Nt, N, r, r, D)
    fp = np.array(conn.frame_parities())
    out = np.zeros(t.shape + (r, r, D))
    for l in range(chart.dim):
        v = vel[..., l, :]
        if not np.any(v):
            continue
        prod = gmul_array(v[..., None, None, :], gam[..., l, :, :, :], G)
        signs = np.where((chart.parity(l) * fp) % 2 == 1, -1.0, 1.0)
        out += prod * signs[None, :, None, None]
    return out


def transport_matrix_B(path: SPath, conn, t: float) -> SuperMatrix:
    if not 0.0 <= t <= 1.0:
        raise DimensionError(f"t={t} outside [0, 1]")
    for seg in path.segments:
        if seg.t0 <= t <= seg.t1:
            B = segment_B(seg, conn, path.chart, path.G, np.array([t]))[0]
            return SuperMatrix(conn.even_rank, conn.odd_rank, path.G, B)
    raise DimensionError(f"t={t} outside [0, 1]")


# ---------------------------------------------------------------- solvers

@dataclass(frozen=True)
class TransportOptions:
    step: float = 1e-3
    estimate_error: bool = True


@dataclass(frozen=True, eq=False)
class TransportOperator:
    matrix: SuperMatrix
    source: SPoint | None
    target: SPoint | None
    meta: dict = field(default_factory=dict)

    @property
    def error_estimate(self) -> float:
        return float(self.meta.get("error_estimate", 0.0))


_LR_LIMIT = 2_000_000


def _rk4_segment(Bgrid: np.ndarray, a: float, b: float, nsteps: int, stride: int, G: int) -> np.ndarray:
    """RK4 for dP/dt = -B P using B sampled at half steps of the finest grid.

    ``stride`` = 1 uses every half step, 2 runs with a doubled step.
    """
    r = Bgrid.shape[-2]
    D = Bgrid.shape[-1]
    h = (b - a) / nsteps
    n_eval = Bgrid.shape[0]
    if n_eval * (r * D) ** 2 <= _LR_LIMIT:
        L = -left_regular_array(Bgrid, G)  # (Nt, rD, rD)
        Y = np.zeros((r * D, r))
        for k in range(r):
            Y[k * D, k] = 1.0
        for n in range(nsteps):
            i0 = 2 * stride * n
            A0, A1, A2 = L[i0], L[i0 + stride], L[i0 + 2 * stride]
            k1 = A0 @ Y
            k2 = A1 @ (Y + 0.5 * h * k1)
            k3 = A1 @ (Y + 0.5 * h * k2)
            k4 = A2 @ (Y + h * k3)
            Y = Y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return Y.reshape(r, D, r).transpose(0, 2, 1)
    Y = np.zeros((r, r, D))
    for k in range(r):
        Y[k, k, 0] = 1.0
    f = lambda Bm, Ym: -gmatmul_array(Bm, Ym, G)  # noqa: E731
    for n in range(nsteps):
        i0 = 2 * stride * n
        B0, B1, B2 = Bgrid[i0], Bgrid[i0 + stride], Bgrid[i0 + 2 * stride]
        k1 = f(B0, Y)
        k2 = f(B1, Y + 0.5 * h * k1)
        k3 = f(B1, Y + 0.5 * h * k2)
        k4 = f(B2, Y + h * k3)
        Y = Y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return Y


def parallel_transport(path: SPath, conn, opts: TransportOptions | None = None) -> TransportOperator:
    """Solve dP/dt = -B(t) P, P(0) = 1 segment by segment and compose."""
    opts = opts or TransportOptions()
    if not (opts.step > 0.0) or not math.isfinite(opts.step):
        raise ValueError(f"invalid step {opts.step}")
    G = path.G
    r = conn.rank
    total = SuperMatrix.identity(conn.even_rank, conn.odd_rank, G)
    coarse_total = total
    nsteps_all = 0
    for seg in path.segments:
        n = max(2, math.ceil((seg.t1 - seg.t0) / opts.step - 1e-9))
        if opts.estimate_error and n % 2:
            n += 1
        grid = np.linspace(seg.t0, seg.t1, 2 * n + 1)
        Bg = segment_B(seg, conn, path.chart, G, grid)
        if not np.all(np.isfinite(Bg)):
            raise NumericFailure("connection evaluated to a non-finite value along the path")
        Y = _rk4_segment(Bg, seg.t0, seg.t1, n, 1, G)
        if not np.all(np.isfinite(Y)):
            raise NumericFailure("transport integration diverged")
        total = SuperMatrix(conn.even_rank, conn.odd_rank, G, Y) @ total
        if opts.estimate_error:
            Yc = _rk4_segment(Bg, seg.t0, seg.t1, n // 2, 2, G)
            coarse_total = SuperMatrix(conn.even_rank, conn.odd_rank, G, Yc) @ coarse_total
        nsteps_all += n
    body = total.body()
    if abs(np.linalg.det(body)) < 1e-300 or not np.all(np.isfinite(body)):
        raise NumericFailure("transport body is singular; the solver blew up")
    err = float(np.max(np.abs(total.data - coarse_total.data)) / 15.0) if opts.estimate_error else 0.0
    meta = {"method": "rk4", "step": opts.step, "steps": nsteps_all, "error_estimate": err}
    return TransportOperator(total, path.start(), path.end(), meta)


def path_ordered_series(path: SPath, conn, terms: int = 6, quad_points: int = 512) -> TransportOperator:
    """Truncated iterated-integral series sum_j (-1)^j int...int B(t_j)...B(t_1).

    Each level is a cumulative composite Simpson integral of B times the previous level.
    """
    if terms < 1:
        raise ValueError("terms must be >= 1")
    if quad_points < 8:
        raise ValueError("quad_points must be >= 8")
    G = path.G
    total = SuperMatrix.identity(conn.even_rank, conn.odd_rank, G)
    N = quad_points + (quad_points % 2)
    for seg in path.segments:
        grid = np.linspace(seg.t0, seg.t1, N + 1)
        Bg = segment_B(seg, conn, path.chart, G, grid)
        level = np.broadcast_to(SuperMatrix.identity(conn.even_rank, conn.odd_rank, G).data, Bg.shape).copy()
        acc = level[-1].copy()
        for _ in range(terms):
            integrand = -gmatmul_array(Bg, level, G)
            level = cumulative_simpson(integrand, x=grid, axis=0, initial=0.0)
            acc = acc + level[-1]
        total = SuperMatrix(conn.even_rank, conn.odd_rank, G, acc) @ total
    meta = {"method": "series", "terms": terms, "quad_points": N}
    return TransportOperator(total, path.start(), path.end(), meta)


def transport_inverse(P: TransportOperator) -> TransportOperator:
    from .algebra import sm_inverse

    return TransportOperator(sm_inverse(P.matrix), P.target, P.source, dict(P.meta))


def transport_concat(P2: TransportOperator, P1: TransportOperator) -> TransportOperator:
    """P2 after P1; the end point of P1 must be the start point of P2."""
    if P1.target is not None and P2.source is not None and not P1.target.allclose(P2.source):
        raise EndpointMismatchError("transports do not share an end point")
    meta = {"method": "concat", "error_estimate": P1.error_estimate + P2.error_estimate}
    return TransportOperator(P2.matrix @ P1.matrix, P1.source, P2.target, meta)


def wilson_trace(loop: SPath, conn, opts: TransportOptions | None = None) -> GrassmannElement:
    if not loop.is_closed():
        raise EndpointMismatchError("Wilson trace needs a closed loop")
    return sm_trace(parallel_transport(loop, conn, opts).matrix)


def wilson_supertrace(loop: SPath, conn, opts: TransportOptions | None = None) -> GrassmannElement:
    """Supertrace of the loop transport.

    Unlike the ordinary trace it is unchanged by gauges with odd off-diagonal blocks.
    """
    if not loop.is_closed():
        raise EndpointMismatchError("Wilson trace needs a closed loop")
    return parallel_transport(loop, conn, opts).matrix.supertrace()


def body_transport(path: SPath, conn, opts: TransportOptions | None = None) -> np.ndarray:
    """Classical transport of the underlying connection along the underlying path."""
    P = parallel_transport(path.body(), body_connection(conn), opts or TransportOptions(estimate_error=False))
    return P.matrix.body()


def body_connection(conn):
    if isinstance(conn, GaugedConnection):
        return GaugedConnection(body_connection(conn.base), [[_drop_eta(f) for f in row] for row in conn.V])
    chart = conn.chart
    bchart = ChartSpec(chart.even_dim, chart.odd_dim, 0, 0)
    gamma = tuple(tuple(tuple(_drop_eta(f) for f in row) for row in M) for M in conn.gamma)
    return ConnectionSpec(bchart, conn.even_rank, conn.odd_rank, gamma, conn.scale)


def _drop_eta(f: SuperFunction) -> SuperFunction:
    keep = {}
    for m, c in f.terms.items():
        em, tm = f.split_mask(m)
        if em == 0:
            keep[tm] = c
    return SuperFunction(f.num_x, f.num_theta, 0, keep)


# ------------------------------------------------------------------ gauge

def ginv_matrix_array(A: np.ndarray, G: int) -> np.ndarray:
    """Batched inverse of even Grassmann matrices (..., r, r, D): body inverse plus Neumann series."""
    body = A[..., 0]
    cond = np.linalg.cond(body) if body.size else np.array(1.0)
    if np.any(~np.isfinite(cond)) or np.any(cond > 1e15):
        raise NotInvertibleError("gauge matrix has a singular body at an evaluation point")
    binv = np.linalg.inv(body)
    Binv = np.zeros_like(A)
    Binv[..., 0] = binv
    N = A.copy()
    N[..., 0] = 0.0
    X = -gmatmul_array(Binv, N, G)
    term = np.zeros_like(A)
    r = A.shape[-2]
    for k in range(r):
        term[..., k, k, 0] = 1.0
    total = term.copy()
    for _ in range(G + 1):
        term = gmatmul_array(term, X, G)
        if not np.any(term):
            break
        total = total + term
    return gmatmul_array(total, Binv, G)


class GaugedConnection:
    """Gauge transform of a connection, evaluated lazily.

    Coefficients become V G_l V^-1 - (sigma_l d_l V) V^-1, where sigma_l
    carries the row signs of the derivative part of the connection operator.
    V^-1 is computed numerically at each evaluation point.
    """

    def __init__(self, base, V: SFMatrix):
        self.base = base
        self.V = [list(row) for row in V]
        chart = base.chart
        r = base.rank
        if len(self.V) != r or any(len(row) != r for row in self.V):
            raise DimensionError(f"gauge matrix must be {r}x{r}")
        fp = base.frame_parities()
        for a in range(r):
            for b in range(r):
                f = self.V[a][b]
                if f.shape() != chart.sf_shape():
                    raise DimensionError("gauge matrix entries must use the chart variables")
                if not f.is_zero() and f.parity() != (fp[a] + fp[b]) % 2:
                    raise ParityError(f"gauge matrix entry ({a + 1},{b + 1}) breaks evenness: {f.text()}")
        self.dV = []
        for l in range(chart.dim):
            name = chart.name(l)
            sg = base.sigma(l)
            self.dV.append([[sf_partial(self.V[m][k], name) * sg[m] for k in range(r)] for m in range(r)])

    @property
    def chart(self):
        return self.base.chart

    @property
    def even_rank(self):
        return self.base.even_rank

    @property
    def odd_rank(self):
        return self.base.odd_rank

    @property
    def rank(self):
        return self.base.rank

    def frame_parities(self):
        return self.base.frame_parities()

    def sigma(self, l):
        return self.base.sigma(l)

    def with_extra(self, extra: int) -> "GaugedConnection":
        return GaugedConnection(self.base.with_extra(extra), self.V)

    def gauge_at(self, point: SPoint) -> SuperMatrix:
        arr = point.array()
        xs, ths = _coord_split(self.chart, arr)
        Vv = sfm_pullback_array(self.V, xs, ths, point.G)
        return SuperMatrix(self.even_rank, self.odd_rank, point.G, Vv)

    def evaluate(self, x_vals, th_vals, G: int, params=None) -> np.ndarray:
        gam = self.base.evaluate(x_vals, th_vals, G, params)
        Vv = sfm_pullback_array(self.V, x_vals, th_vals, G, params)
        Vi = ginv_matrix_array(Vv, G)
        out = np.zeros_like(gam)
        for l in range(self.chart.dim):
            dV = sfm_pullback_array(self.dV[l], x_vals, th_vals, G, params)
            conj = gmatmul_array(gmatmul_array(Vv, gam[..., l, :, :, :], G), Vi, G)
            out[..., l, :, :, :] = conj - gmatmul_array(dV, Vi, G)
        return out


def gauge_transform(conn, V: SFMatrix) -> GaugedConnection:
    return GaugedConnection(conn, V)


def path_B_norm(path: SPath, conn, samples: int = 257) -> float:
    """max_t of the row-sum norm of B(t), with absolute Grassmann coefficients summed.

    This norm is submultiplicative, so it bounds the tail of the iterated-integral series.
    """
    worst = 0.0
    for seg in path.segments:
        grid = np.linspace(seg.t0, seg.t1, samples)
        B = segment_B(seg, conn, path.chart, path.G, grid)
        if B.size:
            worst = max(worst, float(np.max(np.abs(B).sum(axis=(-1, -2)))))
    return worst

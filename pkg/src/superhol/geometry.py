"""Single-chart data: coordinates, bundle connections, curvature and its covariant derivatives.

Conventions used throughout the package:

* Coordinates are indexed 0..n+m-1, even ones first (x1..xn) then odd (th1..thm).
* Frame sections T1..Tr of the bundle: the first ``p`` are even, the rest odd.
* Endomorphisms and connection coefficients use right coefficients, i.e.
  ``E(T^k) = sum_m T^m * E[m][k]``. With this convention composition is the
  ordinary matrix product.
* A scalar ``c`` acting on an endomorphism multiplies row ``m`` by
  ``(-1)^{|c||T^m|} c``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .errors import DimensionError, IndexRangeError, ParityError, UnsupportedOrderError
from .superexpr import SuperFunction, pullback_array, sf_partial


def _sgn(e: int) -> int:
    return -1 if e % 2 else 1


@dataclass(frozen=True)
class ChartSpec:
    """Coordinates (x1..xn | th1..thm) with L base and L' extension generators."""

    even_dim: int
    odd_dim: int
    base_generators: int = 0
    extra_generators: int = 0

    def __post_init__(self):
        for name in ("even_dim", "odd_dim", "base_generators", "extra_generators"):
            if getattr(self, name) < 0:
                raise DimensionError(f"{name} must be >= 0")

    @property
    def dim(self) -> int:
        return self.even_dim + self.odd_dim

    @property
    def total_generators(self) -> int:
        return self.base_generators + self.extra_generators

    def parity(self, l: int) -> int:
        if not 0 <= l < self.dim:
            raise IndexRangeError(f"coordinate index {l} out of range")
        return 0 if l < self.even_dim else 1

    def name(self, l: int) -> str:
        return f"x{l + 1}" if self.parity(l) == 0 else f"th{l - self.even_dim + 1}"

    def index_of(self, name: str) -> int:
        if name.startswith("th"):
            k = int(name[2:])
            if 1 <= k <= self.odd_dim:
                return self.even_dim + k - 1
        elif name.startswith("x"):
            k = int(name[1:])
            if 1 <= k <= self.even_dim:
                return k - 1
        raise IndexRangeError(f"unknown coordinate {name!r}")

    def sf_shape(self) -> tuple:
        return (self.even_dim, self.odd_dim, self.base_generators)

    def zero(self) -> SuperFunction:
        return SuperFunction.zero(*self.sf_shape())

    def one(self) -> SuperFunction:
        return SuperFunction.constant(1.0, *self.sf_shape())

    def with_extra(self, extra: int) -> "ChartSpec":
        return ChartSpec(self.even_dim, self.odd_dim, self.base_generators, extra)


# ------------------------------------------------------------- matrices of superfunctions

SFMatrix = list  # list of rows, each a list of SuperFunction


def sfm_zero(r: int, chart: ChartSpec) -> SFMatrix:
    return [[chart.zero() for _ in range(r)] for _ in range(r)]


def sfm_identity(r: int, chart: ChartSpec) -> SFMatrix:
    return [[chart.one() if a == b else chart.zero() for b in range(r)] for a in range(r)]


def sfm_add(A: SFMatrix, B: SFMatrix) -> SFMatrix:
    return [[a + b for a, b in zip(ra, rb)] for ra, rb in zip(A, B)]


def sfm_sub(A: SFMatrix, B: SFMatrix) -> SFMatrix:
    return [[a - b for a, b in zip(ra, rb)] for ra, rb in zip(A, B)]


def sfm_neg(A: SFMatrix) -> SFMatrix:
    return [[-a for a in ra] for ra in A]


def sfm_scale_real(A: SFMatrix, c: float) -> SFMatrix:
    return [[a * c for a in ra] for ra in A]


def sfm_mul(A: SFMatrix, B: SFMatrix) -> SFMatrix:
    r = len(A)
    out = []
    for a in range(r):
        row = []
        for b in range(len(B[0])):
            acc = None
            for k in range(len(B)):
                if A[a][k].is_zero() or B[k][b].is_zero():
                    continue
                term = A[a][k] * B[k][b]
                acc = term if acc is None else acc + term
            row.append(acc if acc is not None else A[0][0] * 0.0)
        out.append(row)
    return out


def sfm_scalar(c: SuperFunction, A: SFMatrix, row_parities: Sequence[int]) -> SFMatrix:
    """Left action of a homogeneous scalar on an endomorphism (row signs)."""
    pc = c.parity()
    if pc is None:
        return sfm_add(sfm_scalar(c.even_part(), A, row_parities), sfm_scalar(c.odd_part(), A, row_parities))
    return [[(c * a) * _sgn(pc * row_parities[m]) for a in ra] for m, ra in enumerate(A)]


def sfm_is_zero(A: SFMatrix) -> bool:
    return all(a.is_zero() for ra in A for a in ra)


def sfm_text(A: SFMatrix) -> list:
    return [[a.text() for a in ra] for ra in A]


def sfm_pullback_array(A: SFMatrix, x_vals, th_vals, G: int, params=None) -> np.ndarray:
    """Evaluate every entry; result shape (..., r, c, 2**G)."""
    r, c = len(A), len(A[0]) if A else 0
    batch: tuple = ()
    for v in list(x_vals) + list(th_vals):
        batch = np.broadcast_shapes(batch, np.shape(v)[:-1])
    for v in (params or {}).values():
        batch = np.broadcast_shapes(batch, np.shape(v))
    out = np.zeros(batch + (r, c, 1 << G))
    for a in range(r):
        for b in range(c):
            if not A[a][b].is_zero():
                out[..., a, b, :] = pullback_array(A[a][b], x_vals, th_vals, G, params)
    return out


# --------------------------------------------------------------------- connections

@dataclass(frozen=True, eq=False)
class ConnectionSpec:
    """Connection on a rank (p|q) bundle given by right coefficients.

    ``gamma[l][m][k]`` is the coefficient of ``T^m`` in ``nabla_{d/dxi^l} T^k``.
    ``scale`` is an optional real prefactor applied to every coefficient.
    """

    chart: ChartSpec
    even_rank: int
    odd_rank: int
    gamma: tuple
    scale: float = 1.0
    labels: tuple = ()

    def __post_init__(self):
        r = self.rank
        if len(self.gamma) != self.chart.dim:
            raise DimensionError("need one coefficient matrix per coordinate")
        for l, M in enumerate(self.gamma):
            if len(M) != r or any(len(row) != r for row in M):
                raise DimensionError(f"coefficient matrix for {self.chart.name(l)} must be {r}x{r}")
            for m in range(r):
                for k in range(r):
                    f = M[m][k]
                    if f.shape() != self.chart.sf_shape():
                        raise DimensionError(
                            f"coefficient ({self.chart.name(l)}, T{m + 1}, T{k + 1}) has variable shape "
                            f"{f.shape()} instead of {self.chart.sf_shape()}"
                        )
                    want = (self.chart.parity(l) + self.frame_parity(m) + self.frame_parity(k)) % 2
                    par = f.parity()
                    if not f.is_zero() and par != want:
                        raise ParityError(
                            f"connection entry {self.chart.name(l)}.T{k + 1} has a component on T{m + 1} "
                            f"of parity {par}, expected {want}: {f.text()}"
                        )

    @property
    def rank(self) -> int:
        return self.even_rank + self.odd_rank

    def frame_parity(self, k: int) -> int:
        return 0 if k < self.even_rank else 1

    def frame_parities(self) -> list[int]:
        return [self.frame_parity(k) for k in range(self.rank)]

    @classmethod
    def flat(cls, chart: ChartSpec, p: int, q: int) -> "ConnectionSpec":
        r = p + q
        return cls(chart, p, q, tuple(tuple(tuple(chart.zero() for _ in range(r)) for _ in range(r)) for _ in range(chart.dim)))

    @classmethod
    def from_matrices(cls, chart, p, q, mats, scale=1.0) -> "ConnectionSpec":
        return cls(chart, p, q, tuple(tuple(tuple(row) for row in M) for M in mats), scale)

    def matrix(self, l: int) -> SFMatrix:
        M = [list(row) for row in self.gamma[l]]
        return M if self.scale == 1.0 else sfm_scale_real(M, self.scale)

    def is_flat_data(self) -> bool:
        return all(sfm_is_zero(self.matrix(l)) for l in range(self.chart.dim))

    def sigma(self, l: int) -> list[int]:
        pl = self.chart.parity(l)
        return [_sgn(pl * self.frame_parity(m)) for m in range(self.rank)]

    def d_matrix(self, l: int, M: SFMatrix) -> SFMatrix:
        """Row-signed derivative sigma_l * d_l M, the derivative part of nabla_l acting on columns."""
        name = self.chart.name(l)
        sg = self.sigma(l)
        return [[sf_partial(M[m][k], name) * sg[m] for k in range(len(M[m]))] for m in range(len(M))]

    def apply(self, l: int, Z: Sequence[SuperFunction]) -> list[SuperFunction]:
        """nabla_{d/dxi^l} of a section with right components Z."""
        col = [[z] for z in Z]
        out = sfm_add(self.d_matrix(l, col), sfm_mul(self.matrix(l), col))
        return [row[0] for row in out]

    def evaluate(self, x_vals, th_vals, G: int, params=None) -> np.ndarray:
        """All coefficient matrices at a batch of points: shape (..., n+m, r, r, 2**G)."""
        mats = [sfm_pullback_array(self.matrix(l), x_vals, th_vals, G, params) for l in range(self.chart.dim)]
        if not mats:
            batch: tuple = ()
            for v in list(x_vals) + list(th_vals):
                batch = np.broadcast_shapes(batch, np.shape(v)[:-1])
            return np.zeros(batch + (0, self.rank, self.rank, 1 << G))
        return np.stack(mats, axis=-4)

    @cached_property
    def _curv_cache(self) -> dict:
        return {}

    def substitute_eta(self, images) -> "ConnectionSpec":
        """Coefficients pulled back along the superpoint map eta_i -> images[i-1]."""
        Gt = images[0].G if images else 0
        chart = ChartSpec(self.chart.even_dim, self.chart.odd_dim, Gt, 0)
        gamma = tuple(tuple(tuple(f.substitute_eta(images) for f in row) for row in M) for M in self.gamma)
        return ConnectionSpec(chart, self.even_rank, self.odd_rank, gamma, self.scale)

    def with_extra(self, extra: int) -> "ConnectionSpec":
        """Same connection on the chart extended by ``extra`` generators."""
        return ConnectionSpec(self.chart.with_extra(extra), self.even_rank, self.odd_rank, self.gamma, self.scale)


@dataclass(frozen=True, eq=False)
class AuxConnectionSpec:
    """Connection on the tangent sheaf: ``nablabar_l d_k = sum_n d_n * gamma[l][n][k]``."""

    chart: ChartSpec
    gamma: tuple = field(default=())

    def __post_init__(self):
        d = self.chart.dim
        if not self.gamma:
            z = tuple(tuple(tuple(self.chart.zero() for _ in range(d)) for _ in range(d)) for _ in range(d))
            object.__setattr__(self, "gamma", z)
            return
        if len(self.gamma) != d:
            raise DimensionError("aux connection needs one matrix per coordinate")
        for l, M in enumerate(self.gamma):
            for n in range(d):
                for k in range(d):
                    f = M[n][k]
                    want = (self.chart.parity(l) + self.chart.parity(n) + self.chart.parity(k)) % 2
                    if not f.is_zero() and f.parity() != want:
                        raise ParityError(
                            f"aux connection entry {self.chart.name(l)}.{self.chart.name(k)} has a component on "
                            f"d/d{self.chart.name(n)} of parity {f.parity()}, expected {want}"
                        )

    @classmethod
    def flat(cls, chart: ChartSpec) -> "AuxConnectionSpec":
        return cls(chart)

    def matrix(self, l: int) -> SFMatrix:
        return [list(row) for row in self.gamma[l]]

    def is_flat_data(self) -> bool:
        return all(sfm_is_zero(self.matrix(l)) for l in range(self.chart.dim))


# ------------------------------------------------------------------- vector fields

@dataclass(frozen=True, eq=False)
class VectorField:
    """Homogeneous vector field sum_i d/dxi^i * comps[i] (right components)."""

    comps: tuple
    parity: int

    @classmethod
    def coordinate(cls, chart: ChartSpec, i: int) -> "VectorField":
        comps = tuple(chart.one() if j == i else chart.zero() for j in range(chart.dim))
        return cls(comps, chart.parity(i))

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.comps)


FieldLike = Union[int, VectorField]


def _as_field(chart: ChartSpec, f: FieldLike) -> VectorField:
    if isinstance(f, VectorField):
        if len(f.comps) != chart.dim:
            raise DimensionError("vector field has wrong number of components")
        return f
    return VectorField.coordinate(chart, int(f))


def _comp_parity(chart: ChartSpec, f: VectorField, i: int) -> int:
    return (f.parity + chart.parity(i)) % 2


def aux_derivative(chart: ChartSpec, aux: AuxConnectionSpec, X: VectorField, u: VectorField) -> VectorField:
    """nablabar_X u."""
    d = chart.dim
    out = [chart.zero() for _ in range(d)]
    for a in range(d):
        xa = X.comps[a]
        if xa.is_zero():
            continue
        pa = _comp_parity(chart, X, a)
        G = aux.matrix(a)
        for n in range(d):
            val = sf_partial(u.comps[n], chart.name(a)) * _sgn(chart.parity(a) * chart.parity(n))
            for i in range(d):
                if not G[n][i].is_zero() and not u.comps[i].is_zero():
                    val = val + G[n][i] * u.comps[i]
            if val.is_zero():
                continue
            sign = _sgn(chart.parity(a) * pa + pa * chart.parity(n))
            out[n] = out[n] + (xa * val) * sign
    return VectorField(tuple(out), (X.parity + u.parity) % 2)


def curvature_frame(conn: ConnectionSpec, i: int, j: int) -> SFMatrix:
    """Matrix of R(d_i, d_j) in the frame (T^k), right coefficients."""
    key = (i, j)
    cache = conn._curv_cache
    if key in cache:
        return cache[key]
    chart = conn.chart
    pi, pj = chart.parity(i), chart.parity(j)
    Gi, Gj = conn.matrix(i), conn.matrix(j)
    first = sfm_add(conn.d_matrix(i, Gj), sfm_mul(Gi, Gj))
    second = sfm_add(conn.d_matrix(j, Gi), sfm_mul(Gj, Gi))
    R = sfm_sub(first, sfm_scale_real(second, _sgn(pi * pj)))
    cache[key] = R
    return R


def curvature_contract(conn: ConnectionSpec, u: FieldLike, v: FieldLike) -> SFMatrix:
    """R(u, v) for homogeneous vector fields, as a matrix of superfunctions."""
    chart = conn.chart
    u = _as_field(chart, u)
    v = _as_field(chart, v)
    rp = conn.frame_parities()
    out = sfm_zero(conn.rank, chart)
    for i in range(chart.dim):
        if u.comps[i].is_zero():
            continue
        for j in range(chart.dim):
            if v.comps[j].is_zero():
                continue
            R = curvature_frame(conn, i, j)
            if sfm_is_zero(R):
                continue
            pa, pb = _comp_parity(chart, u, i), _comp_parity(chart, v, j)
            pi, pj = chart.parity(i), chart.parity(j)
            c = (u.comps[i] * v.comps[j]) * _sgn(pi * pa + pj * pb + pi * pb)
            out = sfm_add(out, sfm_scalar(c, R, rp))
    return out


def _nabla_compose(conn: ConnectionSpec, X: VectorField, M: SFMatrix) -> SFMatrix:
    """Matrix of nabla_X o M."""
    chart = conn.chart
    rp = conn.frame_parities()
    out = sfm_zero(conn.rank, chart)
    for a in range(chart.dim):
        xa = X.comps[a]
        if xa.is_zero():
            continue
        pa = _comp_parity(chart, X, a)
        inner = sfm_add(conn.d_matrix(a, M), sfm_mul(conn.matrix(a), M))
        out = sfm_add(out, sfm_scalar(xa * _sgn(chart.parity(a) * pa), inner, rp))
    return out


def _compose_nabla(conn: ConnectionSpec, X: VectorField, M: SFMatrix, parity_M: int) -> SFMatrix:
    """Matrix of M o nabla_X."""
    chart = conn.chart
    rp = conn.frame_parities()
    out = sfm_zero(conn.rank, chart)
    for a in range(chart.dim):
        xa = X.comps[a]
        if xa.is_zero():
            continue
        pa = _comp_parity(chart, X, a)
        inner = sfm_mul(M, conn.matrix(a))
        out = sfm_add(out, sfm_scalar(xa * _sgn(chart.parity(a) * pa + parity_M * pa), inner, rp))
    return out


def _first_derivative(conn, aux, X: VectorField, u: VectorField, v: VectorField, tensor, parity_T: int) -> SFMatrix:
    """Apply the first-order covariant derivative rule to a bilinear tensor."""
    chart = conn.chart
    pX, pu, pv = X.parity, u.parity, v.parity
    M = tensor(u, v)
    out = _nabla_compose(conn, X, M)
    du = aux_derivative(chart, aux, X, u)
    if not du.is_zero():
        out = sfm_sub(out, sfm_scale_real(tensor(du, v), _sgn(parity_T * pX)))
    dv = aux_derivative(chart, aux, X, v)
    if not dv.is_zero():
        out = sfm_sub(out, sfm_scale_real(tensor(u, dv), _sgn(pX * (parity_T + pu))))
    back = _compose_nabla(conn, X, M, (parity_T + pu + pv) % 2)
    return sfm_sub(out, sfm_scale_real(back, _sgn(pX * (parity_T + pu + pv))))


def cov_deriv_curvature(
    conn: ConnectionSpec,
    aux: AuxConnectionSpec | None,
    dirs: Sequence[FieldLike],
    u: FieldLike,
    v: FieldLike,
) -> SFMatrix:
    """First or second covariant derivative of the curvature, evaluated on (u, v).

    ``dirs`` lists the directions outermost first: ``[X]`` or ``[X, Y]`` for
    the second derivative with respect to X then Y.
    """
    chart = conn.chart
    aux = aux or AuxConnectionSpec.flat(chart)
    dirs = list(dirs)
    if len(dirs) == 0:
        return curvature_contract(conn, u, v)
    if len(dirs) > 2:
        raise UnsupportedOrderError(f"covariant derivatives of order {len(dirs)} are not supported (max 2)")
    u = _as_field(chart, u)
    v = _as_field(chart, v)
    curv = lambda a, b: curvature_contract(conn, a, b)  # noqa: E731
    if len(dirs) == 1:
        X = _as_field(chart, dirs[0])
        return _first_derivative(conn, aux, X, u, v, curv, 0)
    X = _as_field(chart, dirs[0])
    Y = _as_field(chart, dirs[1])

    def first_Y(a, b):
        return _first_derivative(conn, aux, Y, a, b, curv, 0)

    outer = _first_derivative(conn, aux, X, u, v, first_Y, Y.parity)
    W = aux_derivative(chart, aux, X, Y)
    if W.is_zero():
        return outer
    return sfm_sub(outer, _first_derivative(conn, aux, W, u, v, curv, 0))


def differential_matrix(
    components: Sequence[SuperFunction],
    source_vars: Sequence[str],
    source_parities: Sequence[int],
    target_parities: Sequence[int],
) -> SFMatrix:
    """dphi[i][k] = (-1)^{(|xi^k|+|zeta^i|)|zeta^i|} d phi#(zeta^i) / d xi^k."""
    if len(components) != len(target_parities):
        raise DimensionError("one component per target coordinate is required")
    if len(source_vars) != len(source_parities):
        raise DimensionError("source variables and parities differ in length")
    out = []
    for i, f in enumerate(components):
        zi = target_parities[i]
        out.append([sf_partial(f, var) * _sgn((pk + zi) * zi) for var, pk in zip(source_vars, source_parities)])
    return out

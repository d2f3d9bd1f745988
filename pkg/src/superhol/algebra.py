"""Grassmann algebra arithmetic and graded matrices over it.

Elements of the Grassmann algebra on G generators are dense coefficient
vectors of length 2**G. Index ``k`` is a bitmask: bit ``g-1`` set means the
generator ``eta_g`` occurs in the monomial. Monomials are always written with
increasing generator index, so the product sign is the parity of the
permutation that sorts the concatenated index lists.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg

from .errors import DimensionError, IndexRangeError, NotInvertibleError, ParityError

Subset = tuple[int, ...]


def mask_to_subset(mask: int) -> Subset:
    out = []
    g = 1
    while mask:
        if mask & 1:
            out.append(g)
        mask >>= 1
        g += 1
    return tuple(out)


def subset_to_mask(subset: Iterable[int]) -> int:
    mask = 0
    for g in subset:
        mask |= 1 << (g - 1)
    return mask


def _popcount(a: np.ndarray) -> np.ndarray:
    a = a.astype(np.int64).copy()
    out = np.zeros_like(a)
    while np.any(a):
        out += a & 1
        a >>= 1
    return out


@dataclass(frozen=True)
class _Tables:
    G: int
    D: int
    popcount: np.ndarray  # (D,)
    i_idx: np.ndarray  # (P,) left factor masks
    j_idx: np.ndarray  # (P,) right factor masks
    k_idx: np.ndarray  # (P,) product masks
    sign: np.ndarray  # (P,) +-1
    scatter: np.ndarray  # (P, D) signed scatter matrix
    involution: np.ndarray  # (D,) (-1)^{|I|}


@lru_cache(maxsize=None)
def tables(G: int) -> _Tables:
    if G < 0:
        raise DimensionError("number of generators must be non-negative")
    D = 1 << G
    idx = np.arange(D, dtype=np.int64)
    pc = _popcount(idx)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    ok = (ii & jj) == 0
    i_idx = ii[ok]
    j_idx = jj[ok]
    inversions = np.zeros_like(i_idx)
    for b in range(G):
        has_b = (j_idx >> b) & 1
        inversions += has_b * _popcount(i_idx >> (b + 1))
    sign = np.where(inversions % 2 == 0, 1.0, -1.0)
    k_idx = i_idx | j_idx
    P = i_idx.size
    scatter = np.zeros((P, D))
    scatter[np.arange(P), k_idx] = sign
    inv = np.where(pc % 2 == 0, 1.0, -1.0)
    for arr in (pc, i_idx, j_idx, k_idx, sign, scatter, inv):
        arr.setflags(write=False)
    return _Tables(G, D, pc, i_idx, j_idx, k_idx, sign, scatter, inv)


# ---------------------------------------------------------------- raw arrays

def gmul_array(a: np.ndarray, b: np.ndarray, G: int) -> np.ndarray:
    """Batched Grassmann product on trailing axis of length 2**G."""
    tb = tables(G)
    if G == 0:
        return a * b
    return (a[..., tb.i_idx] * b[..., tb.j_idx]) @ tb.scatter


def gmatmul_array(A: np.ndarray, B: np.ndarray, G: int) -> np.ndarray:
    """Batched matrix product for arrays shaped (..., n, k, D) and (..., k, m, D)."""
    tb = tables(G)
    if G == 0:
        return np.einsum("...nkd,...kmd->...nmd", A, B)
    prod = np.einsum("...nkp,...kmp->...nmp", A[..., tb.i_idx], B[..., tb.j_idx])
    return prod @ tb.scatter


def left_regular_array(A: np.ndarray, G: int) -> np.ndarray:
    """Real matrix of X -> A X acting on columns of Grassmann elements.

    A has shape (..., n, k, D); the result has shape (..., n*D, k*D) with
    row index a*D + kk and column index b*D + j.
    """
    tb = tables(G)
    D = tb.D
    n, k = A.shape[-3], A.shape[-2]
    tmp = np.zeros(A.shape[:-1] + (D, D))
    tmp[..., tb.k_idx, tb.j_idx] = A[..., tb.i_idx] * tb.sign
    tmp = np.swapaxes(tmp, -3, -2)  # (..., n, D, k, D)
    return tmp.reshape(A.shape[:-3] + (n * D, k * D))


def parity_mask(G: int, parity: int) -> np.ndarray:
    return tables(G).popcount % 2 == parity


def _coeff_text(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def element_text(coeffs: np.ndarray, G: int, symbol: str = "eta") -> str:
    """Canonical text: monomials by (cardinality, lexicographic subset)."""
    tb = tables(G)
    nz = [int(k) for k in np.nonzero(coeffs)[0]]
    nz.sort(key=lambda k: (int(tb.popcount[k]), mask_to_subset(k)))
    if not nz:
        return "0"
    parts: list[str] = []
    for pos, k in enumerate(nz):
        c = float(coeffs[k])
        mono = "*".join(f"{symbol}{g}" for g in mask_to_subset(k))
        neg = c < 0
        mag = -c if neg else c
        if mono:
            body = mono if mag == 1 else f"{_coeff_text(mag)}*{mono}"
        else:
            body = _coeff_text(mag)
        if pos == 0:
            parts.append(("-" if neg else "") + body)
        else:
            parts.append((" - " if neg else " + ") + body)
    return "".join(parts)


# ------------------------------------------------------------ GrassmannElement

@dataclass(frozen=True, eq=False)
class GrassmannElement:
    """Element of the Grassmann algebra on ``num_generators`` generators."""

    num_generators: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (1 << self.num_generators,):
            raise DimensionError(
                f"expected {1 << self.num_generators} coefficients, got shape {c.shape}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # constructors
    @classmethod
    def zero(cls, G: int) -> "GrassmannElement":
        return cls(G, np.zeros(1 << G))

    @classmethod
    def scalar(cls, value: float, G: int) -> "GrassmannElement":
        c = np.zeros(1 << G)
        c[0] = value
        return cls(G, c)

    @classmethod
    def monomial(cls, subset: Iterable[int], G: int, coeff: float = 1.0) -> "GrassmannElement":
        """coeff * eta^{i1} ... eta^{ik}; the subset may be unsorted (sign applied)."""
        subset = list(subset)
        if any(g < 1 or g > G for g in subset):
            raise IndexRangeError(f"generator index out of range 1..{G}: {subset}")
        if len(set(subset)) != len(subset):
            return cls.zero(G)
        inv = sum(1 for a in range(len(subset)) for b in range(a + 1, len(subset))
                  if subset[a] > subset[b])
        c = np.zeros(1 << G)
        c[subset_to_mask(subset)] = coeff * (-1) ** inv
        return cls(G, c)

    @classmethod
    def generator(cls, j: int, G: int) -> "GrassmannElement":
        return cls.monomial((j,), G)

    @classmethod
    def from_terms(cls, terms: Mapping[Sequence[int], float], G: int) -> "GrassmannElement":
        out = np.zeros(1 << G)
        for subset, v in terms.items():
            out += cls.monomial(subset, G, v).coeffs
        return cls(G, out)

    # views
    @property
    def G(self) -> int:
        return self.num_generators

    def terms(self) -> dict[Subset, float]:
        return {mask_to_subset(int(k)): float(self.coeffs[k]) for k in np.nonzero(self.coeffs)[0]}

    @property
    def body(self) -> float:
        return float(self.coeffs[0])

    @property
    def soul(self) -> "GrassmannElement":
        c = self.coeffs.copy()
        c[0] = 0.0
        return GrassmannElement(self.G, c)

    def parity(self) -> int | None:
        """0 or 1 for homogeneous elements (zero counts as even), None otherwise."""
        nz = np.nonzero(self.coeffs)[0]
        if nz.size == 0:
            return 0
        par = set((tables(self.G).popcount[nz] % 2).tolist())
        return par.pop() if len(par) == 1 else None

    def even_part(self) -> "GrassmannElement":
        return GrassmannElement(self.G, np.where(parity_mask(self.G, 0), self.coeffs, 0.0))

    def odd_part(self) -> "GrassmannElement":
        return GrassmannElement(self.G, np.where(parity_mask(self.G, 1), self.coeffs, 0.0))

    def is_zero(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.coeffs) <= tol))

    # arithmetic
    def _check(self, other: "GrassmannElement"):
        if other.G != self.G:
            raise DimensionError(f"generator count mismatch: {self.G} vs {other.G}")

    def _coerce(self, other) -> "GrassmannElement":
        if isinstance(other, GrassmannElement):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return GrassmannElement.scalar(float(other), self.G)
        return NotImplemented

    def __add__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return GrassmannElement(self.G, self.coeffs + o.coeffs)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return GrassmannElement(self.G, self.coeffs - o.coeffs)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return GrassmannElement(self.G, o.coeffs - self.coeffs)

    def __neg__(self):
        return GrassmannElement(self.G, -self.coeffs)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return GrassmannElement(self.G, self.coeffs * float(other))
        if isinstance(other, GrassmannElement):
            return gr_mul(self, other)
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return GrassmannElement(self.G, self.coeffs * float(other))
        return NotImplemented

    def __pow__(self, n: int):
        if n < 0:
            return self.inverse() ** (-n)
        out = GrassmannElement.scalar(1.0, self.G)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = GrassmannElement.scalar(float(other), self.G)
        if not isinstance(other, GrassmannElement):
            return NotImplemented
        return self.G == other.G and bool(np.array_equal(self.coeffs, other.coeffs))

    __hash__ = None  # type: ignore[assignment]

    def allclose(self, other: "GrassmannElement", atol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.allclose(self.coeffs, other.coeffs, rtol=0.0, atol=atol))

    def inverse(self) -> "GrassmannElement":
        b = self.body
        if b == 0.0:
            raise NotInvertibleError("element with zero body is not invertible")
        x = -(self.soul * (1.0 / b))
        term = GrassmannElement.scalar(1.0, self.G)
        total = term
        for _ in range(self.G):
            term = term * x
            if term.is_zero():
                break
            total = total + term
        return total * (1.0 / b)

    def eta_derivative(self, j: int) -> "GrassmannElement":
        return gr_eta_derivative(self, j)

    def involution(self) -> "GrassmannElement":
        return GrassmannElement(self.G, self.coeffs * tables(self.G).involution)

    def text(self) -> str:
        return element_text(self.coeffs, self.G)

    def __repr__(self) -> str:
        return f"GrassmannElement({self.text()!r}, G={self.G})"


def gr_mul(a: GrassmannElement, b: GrassmannElement) -> GrassmannElement:
    if a.G != b.G:
        raise DimensionError(f"generator count mismatch: {a.G} vs {b.G}")
    return GrassmannElement(a.G, gmul_array(a.coeffs, b.coeffs, a.G))


def gr_body_soul(a: GrassmannElement) -> tuple[float, GrassmannElement]:
    return a.body, a.soul


def eta_derivative_array(c: np.ndarray, j: int, G: int) -> np.ndarray:
    """Left derivative along eta_j on the trailing axis."""
    if not 1 <= j <= G:
        raise IndexRangeError(f"generator index {j} out of range 1..{G}")
    D = 1 << G
    bit = 1 << (j - 1)
    idx = np.arange(D)
    src = idx[(idx & bit) != 0]
    # position of j inside I counted from the left = number of smaller generators + 1
    before = tables(G).popcount[src & (bit - 1)]
    sgn = np.where(before % 2 == 0, 1.0, -1.0)
    out = np.zeros_like(c)
    out[..., src ^ bit] = c[..., src] * sgn
    return out


def gr_eta_derivative(a: GrassmannElement, j: int) -> GrassmannElement:
    return GrassmannElement(a.G, eta_derivative_array(a.coeffs, j, a.G))


def substitution_matrix(images: Sequence[GrassmannElement], G_target: int) -> np.ndarray:
    """Matrix of the algebra morphism sending source generator i to images[i-1].

    Returns an array of shape (2**G_source, 2**G_target).
    """
    Gs = len(images)
    for im in images:
        if im.G != G_target:
            raise DimensionError("substitution images must share the target algebra")
        if im.parity() != 1 and not im.is_zero():
            raise ParityError("substitution images of odd generators must be odd")
    Ds = 1 << Gs
    out = np.zeros((Ds, 1 << G_target))
    out[0, 0] = 1.0
    for k in range(1, Ds):
        # peel the highest generator: eta^I = eta^{I'} eta^{top}
        top = k.bit_length()
        rest = k ^ (1 << (top - 1))
        out[k] = gmul_array(out[rest], images[top - 1].coeffs, G_target)
    return out


# ----------------------------------------------------------------- SuperMatrix

@dataclass(frozen=True, eq=False)
class SuperMatrix:
    """(p|q)-graded square matrix over the Grassmann algebra on G generators.

    ``data[a, b]`` holds the coefficient vector of entry (a, b). Matrices act on
    columns of right coefficients, so composing endomorphisms is the plain
    matrix product.
    """

    even_rank: int
    odd_rank: int
    num_generators: int
    data: np.ndarray

    def __post_init__(self):
        n = self.even_rank + self.odd_rank
        d = np.array(self.data, dtype=float)
        if d.shape != (n, n, 1 << self.num_generators):
            raise DimensionError(
                f"expected data shape {(n, n, 1 << self.num_generators)}, got {d.shape}"
            )
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def p(self) -> int:
        return self.even_rank

    @property
    def q(self) -> int:
        return self.odd_rank

    @property
    def G(self) -> int:
        return self.num_generators

    @property
    def size(self) -> int:
        return self.even_rank + self.odd_rank

    @property
    def index_parities(self) -> np.ndarray:
        return np.array([0] * self.p + [1] * self.q)

    # constructors
    @classmethod
    def zeros(cls, p: int, q: int, G: int) -> "SuperMatrix":
        return cls(p, q, G, np.zeros((p + q, p + q, 1 << G)))

    @classmethod
    def identity(cls, p: int, q: int, G: int) -> "SuperMatrix":
        d = np.zeros((p + q, p + q, 1 << G))
        d[np.arange(p + q), np.arange(p + q), 0] = 1.0
        return cls(p, q, G, d)

    @classmethod
    def from_real(cls, m, p: int, q: int, G: int) -> "SuperMatrix":
        m = np.asarray(m, dtype=float)
        d = np.zeros((p + q, p + q, 1 << G))
        d[..., 0] = m
        return cls(p, q, G, d)

    @classmethod
    def from_entries(cls, entries: Sequence[Sequence[GrassmannElement]], p: int, q: int) -> "SuperMatrix":
        G = entries[0][0].G
        d = np.array([[e.coeffs for e in row] for row in entries])
        return cls(p, q, G, d)

    def entry(self, a: int, b: int) -> GrassmannElement:
        return GrassmannElement(self.G, self.data[a, b])

    def _like(self, data: np.ndarray) -> "SuperMatrix":
        return SuperMatrix(self.p, self.q, self.G, data)

    def _check(self, other: "SuperMatrix"):
        if (other.p, other.q, other.G) != (self.p, self.q, self.G):
            raise DimensionError(
                f"shape mismatch: ({self.p}|{self.q}, G={self.G}) vs ({other.p}|{other.q}, G={other.G})"
            )

    # grading
    def parity(self) -> int | None:
        """Parity s such that entry (a, b) has parity s+|a|+|b|; None if mixed."""
        found: set[int] = set()
        pc = tables(self.G).popcount % 2
        ip = self.index_parities
        for a in range(self.size):
            for b in range(self.size):
                nz = np.nonzero(self.data[a, b])[0]
                for par in set(pc[nz].tolist()):
                    found.add((par + ip[a] + ip[b]) % 2)
        if not found:
            return 0
        return found.pop() if len(found) == 1 else None

    def is_even(self) -> bool:
        return self.parity() == 0

    def body(self) -> np.ndarray:
        return self.data[..., 0].copy()

    # arithmetic
    def __add__(self, other: "SuperMatrix") -> "SuperMatrix":
        self._check(other)
        return self._like(self.data + other.data)

    def __sub__(self, other: "SuperMatrix") -> "SuperMatrix":
        self._check(other)
        return self._like(self.data - other.data)

    def __neg__(self) -> "SuperMatrix":
        return self._like(-self.data)

    def __matmul__(self, other: "SuperMatrix") -> "SuperMatrix":
        self._check(other)
        return self._like(gmatmul_array(self.data, other.data, self.G))

    def scale(self, c) -> "SuperMatrix":
        """The endomorphism c * self for a scalar c acting from the left.

        For odd parts of c the row of index parity |a| picks up (-1)^{|a|}
        when c is moved past the frame vector.
        """
        if isinstance(c, (int, float, np.floating, np.integer)):
            return self._like(self.data * float(c))
        if c.G != self.G:
            raise DimensionError("generator count mismatch")
        ce = c.even_part().coeffs
        co = c.odd_part().coeffs
        rs = np.where(self.index_parities == 0, 1.0, -1.0)[:, None, None]
        d = gmul_array(ce, self.data, self.G) + rs * gmul_array(co, self.data, self.G)
        return self._like(d)

    def __mul__(self, c):
        return self.scale(c)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, SuperMatrix):
            return NotImplemented
        return (self.p, self.q, self.G) == (other.p, other.q, other.G) and bool(
            np.array_equal(self.data, other.data)
        )

    __hash__ = None  # type: ignore[assignment]

    def allclose(self, other: "SuperMatrix", atol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.allclose(self.data, other.data, rtol=0.0, atol=atol))

    def max_abs_diff(self, other: "SuperMatrix") -> float:
        self._check(other)
        return float(np.max(np.abs(self.data - other.data))) if self.data.size else 0.0

    def norm(self) -> float:
        return float(np.max(np.abs(self.data))) if self.data.size else 0.0

    def left_regular(self) -> np.ndarray:
        return left_regular_array(self.data, self.G)

    def inverse(self) -> "SuperMatrix":
        return sm_inverse(self)

    def exp(self) -> "SuperMatrix":
        return sm_exp(self)

    def trace(self) -> GrassmannElement:
        return sm_trace(self)

    def supertrace(self) -> GrassmannElement:
        return sm_supertrace(self)

    def eta_derivative(self, j: int, operator: bool = True) -> "SuperMatrix":
        """Left eta_j derivative.

        With ``operator=True`` the derivative acts on the endomorphism as a
        whole, frame vectors included, so rows of odd index pick up a sign.
        """
        d = eta_derivative_array(self.data, j, self.G)
        if operator:
            rs = np.where(self.index_parities == 0, 1.0, -1.0)[:, None, None]
            d = d * rs
        return self._like(d)

    def map_coefficients(self, sub: np.ndarray, G_target: int) -> "SuperMatrix":
        """Apply an algebra morphism given as a substitution matrix entrywise."""
        return SuperMatrix(self.p, self.q, G_target, self.data @ sub)

    def text(self) -> str:
        rows = []
        for a in range(self.size):
            rows.append("[" + ", ".join(self.entry(a, b).text() for b in range(self.size)) + "]")
        return "[" + ", ".join(rows) + "]"

    def __repr__(self) -> str:
        return f"SuperMatrix({self.p}|{self.q}, G={self.G}, {self.text()})"


def _homogeneous_parity(X: SuperMatrix) -> int:
    par = X.parity()
    if par is None:
        raise ParityError("supercommutator needs homogeneous matrices")
    return par


def sm_supercommutator(X: SuperMatrix, Y: SuperMatrix) -> SuperMatrix:
    px, py = _homogeneous_parity(X), _homogeneous_parity(Y)
    XY = X @ Y
    YX = Y @ X
    return XY - YX if (px * py) % 2 == 0 else XY + YX


def sm_inverse(A: SuperMatrix) -> SuperMatrix:
    if not A.is_even():
        raise ParityError("only even matrices are inverted")
    body = A.body()
    try:
        if A.size and np.linalg.cond(body) > 1e15:
            raise np.linalg.LinAlgError
        binv = np.linalg.inv(body) if A.size else body
    except np.linalg.LinAlgError:
        raise NotInvertibleError("matrix body is singular") from None
    B0 = SuperMatrix.from_real(binv, A.p, A.q, A.G)
    N = A - SuperMatrix.from_real(body, A.p, A.q, A.G)
    X = -(B0 @ N)
    term = SuperMatrix.identity(A.p, A.q, A.G)
    total = term
    for _ in range(A.G):
        term = term @ X
        if not np.any(term.data):
            break
        total = total + term
    return total @ B0


def sm_exp(A: SuperMatrix) -> SuperMatrix:
    """Matrix exponential via the left-regular real representation."""
    if not A.is_even():
        raise ParityError("exp is defined here for even matrices only")
    n, D = A.size, 1 << A.G
    if n == 0:
        return A
    E = scipy.linalg.expm(A.left_regular())
    cols = E[:, np.arange(n) * D]  # images of e_c (x) 1
    data = cols.reshape(n, D, n).transpose(0, 2, 1)
    return A._like(data)


def sm_trace(A: SuperMatrix) -> GrassmannElement:
    return GrassmannElement(A.G, A.data[np.arange(A.size), np.arange(A.size)].sum(axis=0))


def sm_supertrace(A: SuperMatrix) -> GrassmannElement:
    """Even diagonal block minus odd diagonal block; invariant under even conjugation."""
    diag = A.data[np.arange(A.size), np.arange(A.size)]
    signs = np.where(A.index_parities == 1, -1.0, 1.0)
    return GrassmannElement(A.G, (signs[:, None] * diag).sum(axis=0))

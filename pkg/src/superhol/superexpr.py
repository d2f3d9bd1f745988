"""Expression language for superfunctions.

A superfunction is a finite sum of terms ``c(x) * eta^I * th^J`` where ``c`` is
a smooth scalar expression in the even variables. All odd symbols share one
global order, eta1 < ... < etaG < th1 < ... < thm, so a monomial is stored as a
single bitmask with the eta bits below the theta bits and its sign rules are
those of the Grassmann algebra on G + m generators.
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from .algebra import GrassmannElement, gmul_array
from .errors import (
    DSLSyntaxError,
    DimensionError,
    IndexRangeError,
    ParityError,
    UnknownIdentifierError,
)

FUNCTIONS = ("sin", "cos", "exp", "tanh", "sqrt")


class OddPowerWarning(UserWarning):
    """An odd symbol raised to a power of at least two (identically zero)."""


# =============================================================== scalar trees

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Add:
    terms: tuple


@dataclass(frozen=True)
class Mul:
    factors: tuple


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: int


@dataclass(frozen=True)
class Func:
    name: str
    arg: object


ScalarExpr = Union[Const, Var, Add, Mul, Pow, Func]

ZERO = Const(0.0)
ONE = Const(1.0)


def const(v: float) -> Const:
    v = float(v)
    return Const(0.0 if v == 0.0 else v)


def _split_coeff(t: ScalarExpr) -> tuple[float, ScalarExpr]:
    if isinstance(t, Mul) and isinstance(t.factors[0], Const):
        rest = t.factors[1:]
        return t.factors[0].value, rest[0] if len(rest) == 1 else Mul(rest)
    return 1.0, t


def add(*terms: ScalarExpr) -> ScalarExpr:
    """Sum with flattening, like-term collection and a canonical term order."""
    groups: dict = {}
    c = 0.0
    for t in terms:
        parts = t.terms if isinstance(t, Add) else (t,)
        for p in parts:
            if isinstance(p, Const):
                c += p.value
            else:
                k, rest = _split_coeff(p)
                groups[rest] = groups.get(rest, 0.0) + k
    flat = [mul(Const(k), rest) for rest, k in sorted(groups.items(), key=lambda kv: _sort_key(kv[0])) if k != 0.0]
    if c != 0.0:
        flat.append(Const(c))
    if not flat:
        return ZERO
    if len(flat) == 1:
        return flat[0]
    return Add(tuple(flat))


def mul(*factors: ScalarExpr) -> ScalarExpr:
    """Product with flattening, exponent collection and a canonical factor order."""
    powers: dict = {}
    c = 1.0
    for f in factors:
        parts = f.factors if isinstance(f, Mul) else (f,)
        for p in parts:
            if isinstance(p, Const):
                c *= p.value
            elif isinstance(p, Pow):
                powers[p.base] = powers.get(p.base, 0) + p.exponent
            else:
                powers[p] = powers.get(p, 0) + 1
    if c == 0.0:
        return ZERO
    flat = []
    for b, n in sorted(powers.items(), key=lambda kv: _sort_key(kv[0])):
        if n == 0:
            continue
        e = power(b, n)
        if isinstance(e, Const):
            c *= e.value
        else:
            flat.append(e)
    if not flat:
        return Const(c)
    if c == 1.0:
        return flat[0] if len(flat) == 1 else Mul(tuple(flat))
    if len(flat) == 1 and isinstance(flat[0], Add):
        # constant times a sum: distribute so that sums stay flat
        return add(*(mul(Const(c), t) for t in flat[0].terms))
    return Mul((Const(c),) + tuple(flat))


@lru_cache(maxsize=1 << 16)
def _sort_key(e: ScalarExpr) -> str:
    return expr_text(e)


def neg(e: ScalarExpr) -> ScalarExpr:
    return mul(Const(-1.0), e)


def sub(a: ScalarExpr, b: ScalarExpr) -> ScalarExpr:
    return add(a, neg(b))


def power(base: ScalarExpr, n: int) -> ScalarExpr:
    n = int(n)
    if n == 0:
        return ONE
    if n == 1:
        return base
    if isinstance(base, Const):
        if base.value == 0.0 and n < 0:
            raise ZeroDivisionError("negative power of zero")
        return const(base.value ** n)
    if isinstance(base, Pow):
        return power(base.base, base.exponent * n)
    return Pow(base, n)


_NUMERIC_FUNCS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "sqrt": lambda u: np.sqrt(np.maximum(u, 0.0)),
}


def func(name: str, arg: ScalarExpr) -> ScalarExpr:
    if name not in FUNCTIONS:
        raise UnknownIdentifierError(f"unknown function {name!r}")
    if isinstance(arg, Const):
        return const(float(_NUMERIC_FUNCS[name](arg.value)))
    return Func(name, arg)


def is_negative(e: ScalarExpr) -> bool:
    if isinstance(e, Const):
        return e.value < 0
    if isinstance(e, Mul):
        return isinstance(e.factors[0], Const) and e.factors[0].value < 0
    return False


def free_vars(e: ScalarExpr) -> frozenset:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Add):
        return frozenset().union(*(free_vars(t) for t in e.terms))
    if isinstance(e, Mul):
        return frozenset().union(*(free_vars(t) for t in e.factors))
    if isinstance(e, Pow):
        return free_vars(e.base)
    return free_vars(e.arg)


# ---- printing

def _num_text(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def expr_text(e: ScalarExpr) -> str:
    if isinstance(e, Const):
        return _num_text(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({expr_text(e.arg)})"
    if isinstance(e, Pow):
        b = e.base
        bt = expr_text(b) if isinstance(b, (Var, Func)) else f"({expr_text(b)})"
        return f"{bt}^{e.exponent}"
    if isinstance(e, Mul):
        fs = list(e.factors)
        c = fs.pop(0).value if isinstance(fs[0], Const) else 1.0
        plain = [expr_text(f) for f in fs if not isinstance(f, Add)]
        sums = [f"({expr_text(f)})" for f in fs if isinstance(f, Add)]
        # parsing folds left and a constant meeting a lone sum is distributed,
        # so sums go last and the constant must not touch one directly
        if c != 1.0 and sums and not plain:
            return "*".join(sums) + "*" + _num_text(c)
        lead = "" if c == 1.0 else "-" if c == -1.0 else f"{_num_text(c)}*"
        return lead + "*".join(plain + sums)
    if isinstance(e, Add):
        out = expr_text(e.terms[0])
        for t in e.terms[1:]:
            if is_negative(t):
                out += " - " + expr_text(neg(t))
            else:
                out += " + " + expr_text(t)
        return out
    raise TypeError(f"not an expression: {e!r}")


# ---- differentiation

@lru_cache(maxsize=None)
def _func_derivative(name: str, u: ScalarExpr) -> ScalarExpr:
    if name == "sin":
        return func("cos", u)
    if name == "cos":
        return neg(func("sin", u))
    if name == "exp":
        return func("exp", u)
    if name == "tanh":
        return sub(ONE, power(func("tanh", u), 2))
    if name == "sqrt":
        return mul(Const(0.5), power(func("sqrt", u), -1))
    raise UnknownIdentifierError(name)


@lru_cache(maxsize=65536)
def diff(e: ScalarExpr, v: str) -> ScalarExpr:
    """Symbolic partial derivative with respect to an even variable."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if v not in free_vars(e):
        return ZERO
    if isinstance(e, Add):
        return add(*(diff(t, v) for t in e.terms))
    if isinstance(e, Mul):
        fs = e.factors
        parts = []
        for i, f in enumerate(fs):
            d = diff(f, v)
            if d != ZERO:
                parts.append(mul(*fs[:i], d, *fs[i + 1:]))
        return add(*parts)
    if isinstance(e, Pow):
        return mul(Const(float(e.exponent)), power(e.base, e.exponent - 1), diff(e.base, v))
    if isinstance(e, Func):
        return mul(_func_derivative(e.name, e.arg), diff(e.arg, v))
    raise TypeError(f"not an expression: {e!r}")


@lru_cache(maxsize=None)
def func_derivative_expr(name: str, k: int) -> ScalarExpr:
    """k-th derivative of the named function as an expression in ``_u``."""
    e: ScalarExpr = Func(name, Var("_u"))
    for _ in range(k):
        e = diff(e, "_u")
    return e


def substitute(e: ScalarExpr, mapping: Mapping[str, ScalarExpr]) -> ScalarExpr:
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Add):
        return add(*(substitute(t, mapping) for t in e.terms))
    if isinstance(e, Mul):
        return mul(*(substitute(t, mapping) for t in e.factors))
    if isinstance(e, Pow):
        return power(substitute(e.base, mapping), e.exponent)
    return func(e.name, substitute(e.arg, mapping))


# ---- numeric evaluation

def evaluate(e: ScalarExpr, env: Mapping[str, object]):
    """Evaluate at real points; env values may be floats or numpy arrays."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnknownIdentifierError(f"no value for variable {e.name!r}") from None
    if isinstance(e, Add):
        out = evaluate(e.terms[0], env)
        for t in e.terms[1:]:
            out = out + evaluate(t, env)
        return out
    if isinstance(e, Mul):
        out = evaluate(e.factors[0], env)
        for f in e.factors[1:]:
            out = out * evaluate(f, env)
        return out
    if isinstance(e, Pow):
        b = evaluate(e.base, env)
        if e.exponent < 0:
            with np.errstate(divide="ignore"):
                return 1.0 / np.power(b, -e.exponent)
        return np.power(b, e.exponent)
    return _NUMERIC_FUNCS[e.name](evaluate(e.arg, env))


def _ginv_array(a: np.ndarray, G: int) -> np.ndarray:
    b = a[..., :1]
    n = a.copy()
    n[..., 0] = 0.0
    x = -n / b
    term = np.zeros_like(a)
    term[..., 0] = 1.0
    total = term.copy()
    for _ in range(G):
        term = gmul_array(term, x, G)
        if not np.any(term):
            break
        total = total + term
    return total / b


def _gpow_array(a: np.ndarray, n: int, G: int) -> np.ndarray:
    if n < 0:
        a = _ginv_array(a, G)
        n = -n
    out = np.zeros_like(a)
    out[..., 0] = 1.0
    base = a
    while n:
        if n & 1:
            out = gmul_array(out, base, G)
        n >>= 1
        if n:
            base = gmul_array(base, base, G)
    return out


def evaluate_grassmann(e: ScalarExpr, env: Mapping[str, np.ndarray], G: int) -> np.ndarray:
    """Evaluate with even Grassmann-valued arguments (trailing axis 2**G).

    Elementary functions are expanded as f(a + n) = sum_k f^(k)(a) n^k / k!,
    stopping once the power of the nilpotent part vanishes.
    """
    if isinstance(e, Const):
        out = np.zeros(1 << G)
        out[0] = e.value
        return out
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnknownIdentifierError(f"no value for variable {e.name!r}") from None
    if isinstance(e, Add):
        out = evaluate_grassmann(e.terms[0], env, G)
        for t in e.terms[1:]:
            out = out + evaluate_grassmann(t, env, G)
        return out
    if isinstance(e, Mul):
        fs = e.factors
        out = evaluate_grassmann(fs[0], env, G)
        for f in fs[1:]:
            if isinstance(f, Const):
                out = out * f.value
            else:
                out = gmul_array(out, evaluate_grassmann(f, env, G), G)
        return out
    if isinstance(e, Pow):
        return _gpow_array(evaluate_grassmann(e.base, env, G), e.exponent, G)
    u = evaluate_grassmann(e.arg, env, G)
    a = u[..., 0]
    n = u.copy()
    n[..., 0] = 0.0
    f0 = _NUMERIC_FUNCS[e.name](a)
    out = np.zeros(np.broadcast_shapes(u.shape))
    out[..., 0] = f0
    npow = n
    k = 1
    fact = 1.0
    while np.any(npow):
        fact *= k
        dk = evaluate(func_derivative_expr(e.name, k), {"_u": a})
        out = out + (np.asarray(dk)[..., None] / fact) * npow
        k += 1
        npow = gmul_array(npow, n, G)
    return out


# ============================================================ superfunctions

@lru_cache(maxsize=None)
def _popcount(m: int) -> int:
    return bin(m).count("1")


@lru_cache(maxsize=1 << 16)
def mono_sign(i: int, j: int) -> int:
    """Sign of monomial(i) * monomial(j) on combined masks (0 if overlapping)."""
    if i & j:
        return 0
    inv = 0
    b = 0
    jj = j
    while jj:
        if jj & 1:
            inv += _popcount(i >> (b + 1))
        jj >>= 1
        b += 1
    return -1 if inv % 2 else 1


@dataclass(frozen=True)
class VarContext:
    """Declared variables available to the expression language."""

    num_x: int = 0
    num_theta: int = 0
    num_eta: int = 0
    params: tuple = ("t", "s")
    frames: tuple | None = None  # parities of T1..Tr, only for connection values

    def even_names(self) -> list[str]:
        return [f"x{k}" for k in range(1, self.num_x + 1)] + list(self.params)


@dataclass(frozen=True, eq=False)
class SuperFunction:
    """Canonical sum of c_{I,J}(x) eta^I th^J."""

    num_x: int
    num_theta: int
    num_eta: int
    terms: Mapping[int, ScalarExpr] = field(default_factory=dict)

    def __post_init__(self):
        clean = {int(m): c for m, c in self.terms.items() if c != ZERO}
        limit = 1 << (self.num_eta + self.num_theta)
        for m in clean:
            if m >= limit:
                raise DimensionError(f"monomial mask {m} exceeds declared odd symbols")
        object.__setattr__(self, "terms", dict(sorted(clean.items(), key=lambda kv: self._order(kv[0]))))

    # -- structure
    def _order(self, mask: int):
        return (_popcount(mask), self._positions(mask))

    @staticmethod
    def _positions(mask: int) -> tuple:
        out = []
        b = 0
        while mask:
            if mask & 1:
                out.append(b)
            mask >>= 1
            b += 1
        return tuple(out)

    @property
    def G(self) -> int:
        return self.num_eta

    def shape(self) -> tuple:
        return (self.num_x, self.num_theta, self.num_eta)

    def split_mask(self, mask: int) -> tuple[int, int]:
        """(eta mask, theta mask)."""
        return mask & ((1 << self.num_eta) - 1), mask >> self.num_eta

    def join_mask(self, eta_mask: int, theta_mask: int) -> int:
        return eta_mask | (theta_mask << self.num_eta)

    def keyed_terms(self) -> dict[tuple, ScalarExpr]:
        """Terms keyed by (theta subset J, eta subset I), 1-based."""
        out = {}
        for m, c in self.terms.items():
            em, tm = self.split_mask(m)
            J = tuple(b + 1 for b in self._positions(tm))
            I = tuple(b + 1 for b in self._positions(em))
            out[(J, I)] = c
        return out

    @classmethod
    def zero(cls, n: int, m: int, G: int) -> "SuperFunction":
        return cls(n, m, G, {})

    @classmethod
    def constant(cls, value, n: int, m: int, G: int) -> "SuperFunction":
        e = value if not isinstance(value, (int, float)) else const(value)
        return cls(n, m, G, {0: e})

    @classmethod
    def from_grassmann(cls, g: GrassmannElement, n: int, m: int) -> "SuperFunction":
        return cls(n, m, g.G, {int(k): Const(float(g.coeffs[k])) for k in np.nonzero(g.coeffs)[0]})

    @classmethod
    def theta(cls, j: int, n: int, m: int, G: int) -> "SuperFunction":
        return cls(n, m, G, {1 << (G + j - 1): ONE})

    @classmethod
    def eta(cls, j: int, n: int, m: int, G: int) -> "SuperFunction":
        return cls(n, m, G, {1 << (j - 1): ONE})

    def is_zero(self) -> bool:
        return not self.terms

    def body_expr(self) -> ScalarExpr:
        return self.terms.get(0, ZERO)

    def parity(self) -> int | None:
        pars = {_popcount(m) % 2 for m in self.terms}
        if not pars:
            return 0
        return pars.pop() if len(pars) == 1 else None

    def even_part(self) -> "SuperFunction":
        return self._like({m: c for m, c in self.terms.items() if _popcount(m) % 2 == 0})

    def odd_part(self) -> "SuperFunction":
        return self._like({m: c for m, c in self.terms.items() if _popcount(m) % 2 == 1})

    def _like(self, terms) -> "SuperFunction":
        return SuperFunction(self.num_x, self.num_theta, self.num_eta, terms)

    def _check(self, other: "SuperFunction"):
        if other.shape() != self.shape():
            raise DimensionError(f"superfunction shape mismatch {self.shape()} vs {other.shape()}")

    # -- arithmetic
    def _coerce(self, other) -> "SuperFunction":
        if isinstance(other, SuperFunction):
            self._check(other)
            return other
        if isinstance(other, (int, float)):
            return SuperFunction.constant(float(other), *self.shape())
        if isinstance(other, (Const, Var, Add, Mul, Pow, Func)):
            return SuperFunction.constant(other, *self.shape())
        raise TypeError(f"cannot combine SuperFunction with {type(other).__name__}")

    def __add__(self, other) -> "SuperFunction":
        o = self._coerce(other)
        terms = dict(self.terms)
        for m, c in o.terms.items():
            terms[m] = add(terms[m], c) if m in terms else c
        return self._like(terms)

    __radd__ = __add__

    def __neg__(self) -> "SuperFunction":
        return self._like({m: neg(c) for m, c in self.terms.items()})

    def __sub__(self, other) -> "SuperFunction":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "SuperFunction":
        return self._coerce(other) - self

    def __mul__(self, other) -> "SuperFunction":
        o = self._coerce(other)
        terms: dict[int, ScalarExpr] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in o.terms.items():
                sg = mono_sign(m1, m2)
                if sg == 0:
                    continue
                c = mul(c1, c2) if sg > 0 else neg(mul(c1, c2))
                k = m1 | m2
                terms[k] = add(terms[k], c) if k in terms else c
        return self._like(terms)

    def __rmul__(self, other) -> "SuperFunction":
        return self._coerce(other) * self

    def __pow__(self, n: int) -> "SuperFunction":
        return sf_power(self, n)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SuperFunction):
            return NotImplemented
        return self.shape() == other.shape() and self.terms == other.terms

    __hash__ = None  # type: ignore[assignment]

    def map_coeffs(self, fn: Callable[[ScalarExpr], ScalarExpr]) -> "SuperFunction":
        return self._like({m: fn(c) for m, c in self.terms.items()})

    # -- derivatives
    def partial(self, var: str) -> "SuperFunction":
        return sf_partial(self, var)

    # -- printing
    def text(self) -> str:
        return sf_print(self)

    def __repr__(self) -> str:
        return f"SuperFunction({self.text()!r})"

    def monomial_text(self, mask: int) -> str:
        em, tm = self.split_mask(mask)
        names = [f"eta{b + 1}" for b in self._positions(em)]
        names += [f"th{b + 1}" for b in self._positions(tm)]
        return "*".join(names)

    # -- changes of the odd alphabet
    def with_eta(self, G: int) -> "SuperFunction":
        """Same function viewed over G >= num_eta eta generators."""
        if G < self.num_eta:
            raise DimensionError("cannot shrink the eta alphabet")
        out = {}
        for m, c in self.terms.items():
            em, tm = self.split_mask(m)
            out[em | (tm << G)] = c
        return SuperFunction(self.num_x, self.num_theta, G, out)

    def with_shape(self, n: int, m: int, G: int) -> "SuperFunction":
        if n < self.num_x or m < self.num_theta:
            raise DimensionError("cannot shrink the variable set")
        out = {}
        for mk, c in self.terms.items():
            em, tm = self.split_mask(mk)
            out[em | (tm << G)] = c
        if G < self.num_eta:
            raise DimensionError("cannot shrink the eta alphabet")
        return SuperFunction(n, m, G, out)

    def substitute_eta(self, images: Sequence[GrassmannElement]) -> "SuperFunction":
        """Apply an algebra morphism sending eta_i to the odd element images[i-1]."""
        if len(images) != self.num_eta:
            raise DimensionError("need one image per eta generator")
        Gt = images[0].G if images else 0
        out = SuperFunction.zero(self.num_x, self.num_theta, Gt)
        for m, c in self.terms.items():
            em, tm = self.split_mask(m)
            g = GrassmannElement.scalar(1.0, Gt)
            for b in self._positions(em):
                g = g * images[b]
            piece = SuperFunction.from_grassmann(g, self.num_x, self.num_theta)
            mono = SuperFunction(self.num_x, self.num_theta, Gt, {tm << Gt: c})
            out = out + piece * mono
        return out

    def substitute_scalar(self, mapping: Mapping[str, ScalarExpr]) -> "SuperFunction":
        return self.map_coeffs(lambda c: substitute(c, mapping))

    def free_even_vars(self) -> frozenset:
        return frozenset().union(*(free_vars(c) for c in self.terms.values())) if self.terms else frozenset()


def sf_power(f: SuperFunction, n: int) -> SuperFunction:
    n = int(n)
    soul = f._like({m: c for m, c in f.terms.items() if m != 0})
    if soul.is_zero():
        try:
            return SuperFunction.constant(power(f.body_expr(), n), *f.shape())
        except ZeroDivisionError:
            raise ZeroDivisionError("negative power of zero") from None
    if n >= 2 and f.parity() == 1:
        warnings.warn("odd symbol raised to a power >= 2 is identically zero", OddPowerWarning, stacklevel=3)
        return SuperFunction.zero(*f.shape())
    if n < 0:
        return sf_power(sf_inverse(f), -n)
    out = SuperFunction.constant(1.0, *f.shape())
    for _ in range(n):
        out = out * f
    return out


def sf_inverse(f: SuperFunction) -> SuperFunction:
    if f.parity() != 0:
        raise ParityError("only even superfunctions are inverted")
    b = f.body_expr()
    if b == ZERO:
        raise ZeroDivisionError("superfunction with zero body")
    binv = power(b, -1)
    x = -(f._like({m: c for m, c in f.terms.items() if m != 0}) * SuperFunction.constant(binv, *f.shape()))
    term = SuperFunction.constant(1.0, *f.shape())
    total = term
    while True:
        term = term * x
        if term.is_zero():
            break
        total = total + term
    return total * SuperFunction.constant(binv, *f.shape())


def sf_apply_func(name: str, f: SuperFunction) -> SuperFunction:
    if f.parity() == 1 and not f.is_zero():
        raise ParityError(f"{name} needs an even argument")
    if f.parity() is None:
        raise ParityError(f"{name} needs an even argument")
    u0 = f.body_expr()
    n = f._like({m: c for m, c in f.terms.items() if m != 0})
    out = SuperFunction.constant(func(name, u0), *f.shape())
    npow = n
    k = 1
    fact = 1.0
    while not npow.is_zero():
        fact *= k
        dk = substitute(func_derivative_expr(name, k), {"_u": u0})
        out = out + SuperFunction.constant(mul(Const(1.0 / fact), dk), *f.shape()) * npow
        k += 1
        npow = npow * n
    return out


def sf_partial(f: SuperFunction, var: str) -> SuperFunction:
    """Partial derivative along an even variable or left derivative along th<j>/eta<j>."""
    m = re.fullmatch(r"(th|eta)(\d+)", var)
    if m:
        j = int(m.group(2))
        if m.group(1) == "th":
            if not 1 <= j <= f.num_theta:
                raise UnknownIdentifierError(f"undeclared variable {var!r}")
            bit = f.num_eta + j - 1
        else:
            if not 1 <= j <= f.num_eta:
                raise UnknownIdentifierError(f"undeclared variable {var!r}")
            bit = j - 1
        out = {}
        for mk, c in f.terms.items():
            if not (mk >> bit) & 1:
                continue
            before = _popcount(mk & ((1 << bit) - 1))
            out[mk ^ (1 << bit)] = neg(c) if before % 2 else c
        return f._like(out)
    xm = re.fullmatch(r"x(\d+)", var)
    if xm and not 1 <= int(xm.group(1)) <= f.num_x:
        raise UnknownIdentifierError(f"undeclared variable {var!r}")
    if not xm and var not in ("t", "s"):
        raise UnknownIdentifierError(f"undeclared variable {var!r}")
    return f.map_coeffs(lambda c: diff(c, var))


def sf_print(f: SuperFunction) -> str:
    if f.is_zero():
        return "0"
    out = ""
    for pos, (mk, c) in enumerate(f.terms.items()):
        mono = f.monomial_text(mk)
        negative = pos > 0 and is_negative(c)
        cc = neg(c) if negative else c
        if not mono:
            piece = expr_text(cc)
        elif cc == ONE:
            piece = mono
        elif cc == Const(-1.0):
            piece = "-" + mono
        elif isinstance(cc, Add):
            piece = f"({expr_text(cc)})*{mono}"
        else:
            piece = f"{expr_text(cc)}*{mono}"
        if pos == 0:
            out = piece
        else:
            out += (" - " if negative else " + ") + piece
    return out


# ------------------------------------------------------------- evaluation

def eta_monomial_array(mask: int, G: int) -> np.ndarray:
    out = np.zeros(1 << G)
    out[mask] = 1.0
    return out


def pullback_array(
    f: SuperFunction,
    x_vals: Sequence[np.ndarray],
    theta_vals: Sequence[np.ndarray],
    G: int,
    params: Mapping[str, object] | None = None,
) -> np.ndarray:
    """Batched pullback: x_k -> x_vals[k-1], th_j -> theta_vals[j-1], eta_i -> eta_i.

    Values are arrays with trailing axis 2**G (G >= f.num_eta); params are real
    scalars or arrays for t and s.
    """
    if G < f.num_eta:
        raise DimensionError("target algebra smaller than the function's eta alphabet")
    if len(x_vals) != f.num_x or len(theta_vals) != f.num_theta:
        raise DimensionError("assignment does not match declared variables")
    params = dict(params or {})
    D = 1 << G
    batch: tuple = ()
    for v in list(x_vals) + list(theta_vals):
        batch = np.broadcast_shapes(batch, np.shape(v)[:-1])
    for v in params.values():
        batch = np.broadcast_shapes(batch, np.shape(v))
    real_env: dict[str, object] | None = {}
    for k, v in enumerate(x_vals, start=1):
        v = np.asarray(v)
        if np.any(v[..., 1:]):
            real_env = None
            break
        real_env[f"x{k}"] = v[..., 0]
    genv: dict[str, np.ndarray] = {}
    for k, v in enumerate(x_vals, start=1):
        genv[f"x{k}"] = np.asarray(v)
    for name, v in params.items():
        a = np.zeros(np.shape(v) + (D,))
        a[..., 0] = v
        genv[name] = a
        if real_env is not None:
            real_env[name] = v
    out = np.zeros(batch + (D,))
    theta_cache: dict[int, np.ndarray] = {0: eta_monomial_array(0, G)}

    def theta_product(tm: int) -> np.ndarray:
        if tm in theta_cache:
            return theta_cache[tm]
        top = tm.bit_length()
        rest = tm ^ (1 << (top - 1))
        val = gmul_array(theta_product(rest), np.asarray(theta_vals[top - 1]), G)
        theta_cache[tm] = val
        return val

    for mk, c in f.terms.items():
        em, tm = f.split_mask(mk)
        if real_env is not None:
            cv = np.asarray(evaluate(c, real_env), dtype=float)
            coef = np.zeros(np.shape(cv) + (D,))
            coef[..., 0] = cv
        else:
            coef = evaluate_grassmann(c, genv, G)
        # eta^I th^J with eta^I a single monomial: shift by the eta mask
        if tm:
            val = gmul_array(eta_monomial_array(em, G), theta_product(tm), G)
            out = out + gmul_array(coef, val, G)
        else:
            # coef * eta^I, term by term
            shifted = np.zeros(np.shape(coef)[:-1] + (D,))
            ok = (np.arange(D) & em) == 0
            src = np.nonzero(ok)[0]
            sg = np.array([mono_sign(int(i), em) for i in src])
            shifted[..., src | em] = coef[..., src] * sg
            out = out + shifted
    return out


def sf_pullback(f: SuperFunction, assignment: Mapping[str, object], G: int | None = None):
    """Pull a superfunction back along an assignment of its variables.

    With GrassmannElement values (and real t, s) the result is a
    GrassmannElement. With SuperFunction values the result is the symbolic
    composite, a SuperFunction in the variables of the assigned values.
    """
    values = list(assignment.values())
    if values and all(isinstance(v, SuperFunction) or isinstance(v, (int, float)) for v in values) and any(
        isinstance(v, SuperFunction) for v in values
    ):
        return sf_compose(f, assignment)
    G = G if G is not None else next((v.G for v in values if isinstance(v, GrassmannElement)), f.num_eta)
    x_vals, th_vals = [], []
    for k in range(1, f.num_x + 1):
        v = assignment.get(f"x{k}")
        if v is None:
            raise UnknownIdentifierError(f"no value assigned to x{k}")
        g = v if isinstance(v, GrassmannElement) else GrassmannElement.scalar(float(v), G)
        if g.parity() != 0:
            raise ParityError(f"even coordinate x{k} assigned a non-even element")
        x_vals.append(g.coeffs)
    for j in range(1, f.num_theta + 1):
        v = assignment.get(f"th{j}")
        if v is None:
            raise UnknownIdentifierError(f"no value assigned to th{j}")
        g = v if isinstance(v, GrassmannElement) else GrassmannElement.scalar(float(v), G)
        if not g.is_zero() and g.parity() != 1:
            raise ParityError(f"odd coordinate th{j} assigned a non-odd element")
        th_vals.append(g.coeffs)
    params = {k: float(v) for k, v in assignment.items() if k in ("t", "s")}
    return GrassmannElement(G, pullback_array(f, x_vals, th_vals, G, params))


def eval_expr_sf(e: ScalarExpr, env: Mapping[str, SuperFunction], shape: tuple) -> SuperFunction:
    """Evaluate a scalar tree in the superfunction ring."""
    if isinstance(e, Const):
        return SuperFunction.constant(e, *shape)
    if isinstance(e, Var):
        if e.name in env:
            return env[e.name]
        return SuperFunction.constant(e, *shape)
    if isinstance(e, Add):
        out = SuperFunction.zero(*shape)
        for t in e.terms:
            out = out + eval_expr_sf(t, env, shape)
        return out
    if isinstance(e, Mul):
        out = SuperFunction.constant(1.0, *shape)
        for t in e.factors:
            out = out * eval_expr_sf(t, env, shape)
        return out
    if isinstance(e, Pow):
        return sf_power(eval_expr_sf(e.base, env, shape), e.exponent)
    return sf_apply_func(e.name, eval_expr_sf(e.arg, env, shape))


def sf_compose(f: SuperFunction, assignment: Mapping[str, object]) -> SuperFunction:
    """Symbolic composite: substitute superfunctions for x<k>, th<j>, t, s."""
    sample = next(v for v in assignment.values() if isinstance(v, SuperFunction))
    shape = sample.shape()
    env: dict[str, SuperFunction] = {}
    for k, v in assignment.items():
        env[k] = v if isinstance(v, SuperFunction) else SuperFunction.constant(float(v), *shape)
    for k in range(1, f.num_x + 1):
        v = env.get(f"x{k}")
        if v is not None and v.parity() != 0:
            raise ParityError(f"even coordinate x{k} assigned a non-even function")
    for j in range(1, f.num_theta + 1):
        v = env.get(f"th{j}")
        if v is None:
            raise UnknownIdentifierError(f"no value assigned to th{j}")
        if not v.is_zero() and v.parity() != 1:
            raise ParityError(f"odd coordinate th{j} assigned a non-odd function")
    if shape[2] < f.num_eta:
        raise DimensionError("target eta alphabet too small")
    out = SuperFunction.zero(*shape)
    for mk, c in f.terms.items():
        em, tm = f.split_mask(mk)
        piece = eval_expr_sf(c, env, shape)
        piece = piece * SuperFunction(shape[0], shape[1], shape[2], {em: ONE})
        b = 0
        while tm:
            if tm & 1:
                piece = piece * env[f"th{b + 1}"]
            tm >>= 1
            b += 1
        out = out + piece
    return out


# ================================================================== parsing

_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r\n]+)"
    r"|(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    line, col = 1, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise DSLSyntaxError(f"unexpected character {text[pos]!r}", line, col, text)
        kind = m.lastgroup
        s = m.group()
        if kind != "ws":
            toks.append(_Tok(kind, s, line, col))
        for ch in s:
            if ch == "\n":
                line += 1
                col = 1
            else:
                col += 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, col))
    return toks


class _Framed:
    """Value during parsing: frame index (0 = none) -> SuperFunction."""

    def __init__(self, parts: dict[int, SuperFunction], shape: tuple, frames: tuple):
        self.parts = {k: v for k, v in parts.items() if not v.is_zero()}
        self.shape = shape
        self.frames = frames

    def plain(self) -> SuperFunction:
        return self.parts.get(0, SuperFunction.zero(*self.shape))

    def has_frame(self) -> bool:
        return any(k != 0 for k in self.parts)

    def _new(self, parts):
        return _Framed(parts, self.shape, self.frames)

    def __add__(self, other: "_Framed") -> "_Framed":
        parts = dict(self.parts)
        for k, v in other.parts.items():
            parts[k] = parts[k] + v if k in parts else v
        return self._new(parts)

    def __neg__(self) -> "_Framed":
        return self._new({k: -v for k, v in self.parts.items()})

    def mul(self, other: "_Framed", tok: _Tok) -> "_Framed":
        parts: dict[int, SuperFunction] = {}

        def put(k, v):
            parts[k] = parts[k] + v if k in parts else v

        for k1, v1 in self.parts.items():
            for k2, v2 in other.parts.items():
                if k1 and k2:
                    raise DSLSyntaxError("a frame symbol may occur only once per term", tok.line, tok.col)
                if k2 and self.frames[k2 - 1] == 1:
                    # v1 * T * v2 = T * (alpha(v1)) * v2 with alpha the parity involution
                    v1 = v1.even_part() - v1.odd_part()
                put(k1 or k2, v1 * v2)
        return self._new(parts)


class _Parser:
    def __init__(self, text: str, ctx: VarContext):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.ctx = ctx
        self.shape = (ctx.num_x, ctx.num_theta, ctx.num_eta)
        self.frames = tuple(ctx.frames or ())

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.tok
        raise DSLSyntaxError(msg, tok.line, tok.col, self.text)

    def eat(self, kind: str, text: str | None = None) -> _Tok:
        t = self.tok
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            got = t.text or "end of input"
            self.fail(f"expected {want!r}, found {got!r}")
        self.i += 1
        return t

    def wrap(self, sf: SuperFunction, frame: int = 0) -> _Framed:
        return _Framed({frame: sf}, self.shape, self.frames)

    def parse(self) -> _Framed:
        v = self.expr()
        if self.tok.kind != "eof":
            self.fail(f"unexpected {self.tok.text!r}")
        return v

    def expr(self) -> _Framed:
        v = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.eat("op").text
            r = self.term()
            v = v + r if op == "+" else v + (-r)
        return v

    def term(self) -> _Framed:
        v = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            optok = self.eat("op")
            if optok.text == "*":
                v = v.mul(self.unary(), optok)
            else:
                rtok = self.tok
                r = self.unary()
                if r.has_frame():
                    self.fail("division by a frame symbol", rtok)
                rs = r.plain()
                if set(rs.terms) - {0} or not isinstance(rs.body_expr(), Const):
                    self.fail("division is only allowed by a nonzero literal", rtok)
                c = rs.body_expr().value
                if c == 0.0:
                    self.fail("division by zero", rtok)
                v = v.mul(self.wrap(SuperFunction.constant(1.0 / c, *self.shape)), optok)
        return v

    def unary(self) -> _Framed:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.eat("op")
            return -self.unary()
        return self.power()

    def power(self) -> _Framed:
        base_tok = self.tok
        v = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.eat("op")
            sign = 1
            if self.tok.kind == "op" and self.tok.text == "-":
                self.eat("op")
                sign = -1
            t = self.eat("num")
            if not re.fullmatch(r"\d+", t.text):
                self.fail("exponent must be an integer", t)
            n = sign * int(t.text)
            if v.has_frame():
                self.fail("frame symbols cannot be raised to a power", base_tok)
            base = v.plain()
            try:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    res = sf_power(base, n)
                for w in caught:
                    if issubclass(w.category, OddPowerWarning):
                        warnings.warn(
                            f"odd symbol raised to power {n} at line {base_tok.line}, column {base_tok.col} is zero",
                            OddPowerWarning,
                            stacklevel=4,
                        )
            except (ZeroDivisionError, ParityError) as exc:
                self.fail(str(exc), base_tok)
            return self.wrap(res)
        return v

    def atom(self) -> _Framed:
        t = self.tok
        if t.kind == "num":
            self.eat("num")
            return self.wrap(SuperFunction.constant(float(t.text), *self.shape))
        if t.kind == "op" and t.text == "(":
            self.eat("op")
            v = self.expr()
            self.eat("op", ")")
            return v
        if t.kind == "ident":
            self.eat("ident")
            if t.text in FUNCTIONS:
                self.eat("op", "(")
                arg = self.expr()
                self.eat("op", ")")
                if arg.has_frame():
                    self.fail("frame symbols cannot appear inside functions", t)
                try:
                    return self.wrap(sf_apply_func(t.text, arg.plain()))
                except ParityError as exc:
                    self.fail(str(exc), t)
            return self.identifier(t)
        if t.kind == "eof":
            self.fail("unexpected end of input")
        self.fail(f"unexpected {t.text!r}")

    def identifier(self, t: _Tok) -> _Framed:
        name = t.text
        n, m, G = self.shape
        mm = re.fullmatch(r"(x|th|eta|T)(\d+)", name)
        if name in self.ctx.params:
            return self.wrap(SuperFunction.constant(Var(name), *self.shape))
        if mm:
            kind, k = mm.group(1), int(mm.group(2))
            if kind == "x" and 1 <= k <= n:
                return self.wrap(SuperFunction.constant(Var(name), *self.shape))
            if kind == "th" and 1 <= k <= m:
                return self.wrap(SuperFunction.theta(k, n, m, G))
            if kind == "eta" and 1 <= k <= G:
                return self.wrap(SuperFunction.eta(k, n, m, G))
            if kind == "T" and 1 <= k <= len(self.frames):
                return self.wrap(SuperFunction.constant(1.0, *self.shape), frame=k)
        raise UnknownIdentifierError(f"unknown identifier {name!r} at line {t.line}, column {t.col}")


def parse_superfunction(text: str, context: VarContext) -> SuperFunction:
    """Parse text into a canonical superfunction."""
    if context.frames:
        raise ValueError("use parse_frame_combination for values with frame symbols")
    return _Parser(text, context).parse().plain()


def parse_frame_combination(text: str, context: VarContext) -> list[SuperFunction]:
    """Parse ``sum_m T<m> * c_m`` into right coefficients [c_1, ..., c_r].

    Factors written to the left of an odd frame symbol are moved past it with
    the Grassmann sign, so ``th1*T1`` and ``-T1*th1`` give the same result
    when T1 is odd.
    """
    parser = _Parser(text, context)
    val = parser.parse()
    plain = val.parts.get(0)
    if plain is not None and not plain.is_zero():
        raise DSLSyntaxError("every term must contain exactly one frame symbol", 1, 1, text)
    shape = (context.num_x, context.num_theta, context.num_eta)
    return [val.parts.get(k, SuperFunction.zero(*shape)) for k in range(1, len(context.frames or ()) + 1)]


def parse_scalar(text: str, names: Iterable[str] = ("t", "s")) -> ScalarExpr:
    """Parse a purely even expression over the given variable names."""
    names = tuple(names)
    nx = max([int(n[1:]) for n in names if re.fullmatch(r"x\d+", n)] + [0])
    ctx = VarContext(num_x=nx, params=tuple(n for n in names if not re.fullmatch(r"x\d+", n)))
    sf = parse_superfunction(text, ctx)
    return sf.body_expr()

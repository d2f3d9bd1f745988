import numpy as np
import pytest

from superhol.algebra import GrassmannElement
from superhol.geometry import ChartSpec, ConnectionSpec
from superhol.superexpr import Const, SuperFunction, Var, VarContext, func, mul, parse_frame_combination, parse_superfunction
from superhol.transport import SPoint


def _parity(mask: int) -> int:
    return bin(mask).count("1") % 2


def random_coeff(rng, n: int, amp: float):
    """A smooth random coefficient in x1..xn."""
    c = Const(float(rng.uniform(-amp, amp)))
    if n == 0:
        return c
    k = int(rng.integers(1, n + 1))
    choice = int(rng.integers(3))
    if choice == 0:
        return c
    if choice == 1:
        return mul(c, Var(f"x{k}"))
    return mul(c, func("sin", Var(f"x{k}")))


def random_sf(rng, n, m, L, parity, amp=1.0, terms=3) -> SuperFunction:
    masks = [mk for mk in range(1 << (L + m)) if _parity(mk) == parity]
    out = {}
    if not masks:
        return SuperFunction(n, m, L, out)
    for _ in range(terms):
        mk = masks[int(rng.integers(len(masks)))]
        out[mk] = random_coeff(rng, n, amp)
    return SuperFunction(n, m, L, out)


def random_connection(rng, n, m, p, q, L=0, amp=0.5, terms=2) -> ConnectionSpec:
    chart = ChartSpec(n, m, L)
    r = p + q
    fp = [0] * p + [1] * q
    mats = []
    for l in range(n + m):
        M = [[random_sf(rng, n, m, L, (chart.parity(l) + fp[a] + fp[b]) % 2, amp, terms) for b in range(r)] for a in range(r)]
        mats.append(M)
    return ConnectionSpec.from_matrices(chart, p, q, mats)


def random_gauge(rng, chart: ChartSpec, p, q, amp=0.3):
    n, m, L = chart.even_dim, chart.odd_dim, chart.base_generators
    r = p + q
    fp = [0] * p + [1] * q
    V = []
    for a in range(r):
        row = []
        for b in range(r):
            f = random_sf(rng, n, m, L, (fp[a] + fp[b]) % 2, amp, 2)
            if a == b:
                f = f + SuperFunction.constant(Const(1.0), n, m, L)
            row.append(f)
        V.append(row)
    return V


def random_grassmann(rng, G, parity=None, scale=1.0, integer=False) -> GrassmannElement:
    c = rng.integers(-3, 4, size=1 << G).astype(float) if integer else rng.normal(size=1 << G) * scale
    if parity is not None:
        mask = np.array([_parity(k) == parity for k in range(1 << G)])
        c = np.where(mask, c, 0.0)
    return GrassmannElement(G, c)


def random_spoint(rng, chart: ChartSpec, G: int, soul=0.3, box=1.0) -> SPoint:
    coords = []
    for l in range(chart.dim):
        if chart.parity(l) == 0:
            g = random_grassmann(rng, G, 0, soul)
            g = GrassmannElement(G, np.concatenate([[rng.uniform(-box, box)], g.coeffs[1:]]))
        else:
            g = random_grassmann(rng, G, 1, soul)
        coords.append(g)
    return SPoint(chart, tuple(coords))


def odd_line_connection(text="th1*T1") -> ConnectionSpec:
    chart = ChartSpec(0, 1, 0)
    col = parse_frame_combination(text, VarContext(0, 1, 0, frames=(1,)))
    return ConnectionSpec.from_matrices(chart, 0, 1, [[[col[0]]]])


def mixed_connection() -> ConnectionSpec:
    """(1|1) domain, rank (1|1) bundle, coefficients depending on theta."""
    chart = ChartSpec(1, 1, 0)
    ctx = VarContext(1, 1, 0, frames=(0, 1))
    cols = {
        0: ["0.3*x1*T1 + th1*T2", "0.5*th1*T1 + x1*T2"],
        1: ["x1*T2 + 0.2*th1*T1", "sin(x1)*T1 + 0.4*x1*th1*T2"],
    }
    mats = []
    for l in range(2):
        cs = [parse_frame_combination(s, ctx) for s in cols[l]]
        mats.append([[cs[k][a] for k in range(2)] for a in range(2)])
    return ConnectionSpec.from_matrices(chart, 1, 1, mats)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def odd_line():
    return odd_line_connection()


@pytest.fixture
def mixed():
    return mixed_connection()


def sf(text, n=0, m=0, L=0):
    return parse_superfunction(text, VarContext(n, m, L))

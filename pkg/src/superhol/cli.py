"""Scene files, command dispatch, reports and the bundled verification suite."""
from __future__ import annotations

import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .algebra import GrassmannElement, SuperMatrix, mask_to_subset, sm_supercommutator
from .errors import EndpointMismatchError, SceneError, SuperholError, VerificationFailure
from .galaev import compare_spans, extract_all, galaev_generators_direct
from .geometry import (
    AuxConnectionSpec,
    ChartSpec,
    ConnectionSpec,
    curvature_frame,
    sfm_add,
    sfm_is_zero,
    sfm_mul,
    sfm_scale_real,
    sfm_text,
)
from .holonomy import (
    HolonomyBasis,
    SamplingConfig,
    sample_holonomy_algebra,
    verify_parallel_invariance,
)
from .superexpr import SuperFunction, VarContext, parse_frame_combination, parse_superfunction, sf_pullback
from .transport import (
    CLOSURE_TOL,
    Segment,
    SPath,
    SPoint,
    TransportOptions,
    body_transport,
    build_polygon,
    gauge_transform,
    parallel_transport,
    path_B_norm,
    path_ordered_series,
    transport_concat,
    transport_inverse,
)

SCHEMA = "superhol/1"

DEFAULTS = {
    "step": 1e-3,
    "series_terms": 6,
    "quad_points": 512,
    "seed": 42,
    "extra_generators": 2,
    "samples": 32,
    "tol": 1e-8,
    "r_max": 2,
}


# ------------------------------------------------------------------------ scene

@dataclass
class Scene:
    chart: ChartSpec
    conn: ConnectionSpec
    aux: AuxConnectionSpec | None = None
    points: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    closed: dict = field(default_factory=dict)
    gauges: dict = field(default_factory=dict)
    sections: dict = field(default_factory=dict)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    num_loops: int = 16
    solver: dict = field(default_factory=dict)
    extra_generators: int | None = None
    source: str = ""

    @property
    def G(self) -> int:
        return self.chart.base_generators

    def origin(self) -> SPoint:
        return SPoint.from_real(self.chart, [0.0] * self.chart.even_dim, self.G)

    def point(self, name: str | None) -> SPoint:
        if name is None:
            return self.points.get("x", self.origin())
        if name not in self.points:
            raise SceneError(f"unknown point {name!r}; known: {sorted(self.points)}", "E_REFERENCE")
        return self.points[name]

    def path(self, name: str | None) -> SPath:
        if name is None:
            if len(self.paths) != 1:
                raise SceneError(f"name a path with --path; known: {sorted(self.paths)}", "E_REFERENCE")
            name = next(iter(self.paths))
        if name not in self.paths:
            raise SceneError(f"unknown path {name!r}; known: {sorted(self.paths)}", "E_REFERENCE")
        return self.paths[name]

    def describe(self) -> dict:
        ch = self.chart
        return {
            "manifold": {"even": ch.even_dim, "odd": ch.odd_dim, "generators": ch.base_generators},
            "bundle": {"even": self.conn.even_rank, "odd": self.conn.odd_rank},
            "connection": {
                f"{ch.name(l)}.T{k + 1}": _column_text(self.conn.matrix(l), k)
                for l in range(ch.dim)
                for k in range(self.conn.rank)
                if _column_text(self.conn.matrix(l), k) != "0"
            },
            "points": {n: p.text() for n, p in self.points.items()},
            "paths": {n: p.text() for n, p in self.paths.items()},
            "gauges": {n: sfm_text(V) for n, V in self.gauges.items()},
            "sections": {n: [f.text() for f in X] for n, (X, _) in self.sections.items()},
        }


def _column_text(M, k: int) -> str:
    parts = []
    for m, row in enumerate(M):
        c = row[k]
        if not c.is_zero():
            parts.append(f"T{m + 1}*({c.text()})")
    return " + ".join(parts) if parts else "0"


def _table(data: dict, key: str, source: str) -> dict:
    val = data.get(key, {})
    if not isinstance(val, dict):
        raise SceneError(f"{source}: [{key}] must be a table")
    return val


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        name = f"{prefix}.{k}" if prefix else str(k)
        if isinstance(v, dict):
            out.update(_flatten(v, name))
        else:
            out[name] = v
    return out


def _int(table: dict, key: str, default: int, where: str) -> int:
    v = table.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int) or v < 0:
        raise SceneError(f"{where}: {key} must be a non-negative integer, got {v!r}")
    return v


def _dsl(where: str, key: str, value):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return repr(float(value))
    if not isinstance(value, str):
        raise SceneError(f"{where}: {key} must be a DSL string")
    return value


def _context_error(where: str, err: SuperholError) -> SuperholError:
    err.message = f"{where}: {err.message}"
    err.args = (err.message,)
    return err


def _coord_index(chart: ChartSpec, name: str, where: str) -> int:
    try:
        return chart.index_of(name)
    except (SuperholError, ValueError) as e:
        raise SceneError(f"{where}: unknown coordinate {name!r}", "E_REFERENCE") from e


def _frame_index(name: str, r: int, where: str) -> int:
    m = re.fullmatch(r"T(\d+)", name)
    if not m or not 1 <= int(m.group(1)) <= r:
        raise SceneError(f"{where}: unknown frame {name!r} (bundle has T1..T{r})", "E_REFERENCE")
    return int(m.group(1)) - 1


def _parse_columns(table: dict, chart: ChartSpec, frames: tuple, where: str, row_key: bool):
    """Parse '<coord>.<frame>' (or '<frame>') keys into SF matrices of right coefficients."""
    r = len(frames)
    ctx = VarContext(chart.even_dim, chart.odd_dim, chart.base_generators, params=(), frames=frames)
    mats = {}
    for key, value in _flatten(table).items():
        text = _dsl(where, key, value)
        if row_key:
            head, _, tail = key.partition(".")
            if not tail:
                raise SceneError(f"{where}: key {key!r} must look like '<coordinate>.<frame>'")
            l = _coord_index(chart, head, where)
        else:
            l, tail = 0, key
        k = _frame_index(tail, r, where)
        try:
            col = parse_frame_combination(text, ctx)
        except SuperholError as e:
            raise _context_error(f"{where} {key}", e) from e
        M = mats.setdefault(l, [[chart.zero() for _ in range(r)] for _ in range(r)])
        for m in range(r):
            M[m][k] = col[m]
    return mats


def _aux_text(text: str, chart: ChartSpec) -> str:
    """Frame symbols d_x1, d_th1 of the tangent sheaf become T<k>."""

    def rep(m):
        return f"T{_coord_index(chart, m.group(1), 'aux_connection') + 1}"

    return re.sub(r"\bd_(x\d+|th\d+)\b", rep, text)


def _grassmann(text: str, G: int, where: str) -> GrassmannElement:
    try:
        f = parse_superfunction(text, VarContext(0, 0, G, params=()))
    except SuperholError as e:
        raise _context_error(where, e) from e
    return sf_pullback(f, {}, G)


def _parse_interval(text, where: str) -> tuple[float, float]:
    m = re.fullmatch(r"\s*([-+0-9.eE]+)\s*\.\.\s*([-+0-9.eE]+)\s*", str(text))
    if not m:
        raise SceneError(f"{where}: interval must look like 'a..b', got {text!r}")
    return float(m.group(1)), float(m.group(2))


def _parse_path(name: str, table: dict, scene: Scene) -> SPath:
    chart, G = scene.chart, scene.G
    where = f"[path.{name}]"
    closed = table.get("closed", False)
    if "polygon" in table:
        refs = table["polygon"]
        if not isinstance(refs, list) or len(refs) < 2:
            raise SceneError(f"{where}: polygon needs a list of at least two point names")
        pts = [scene.point(str(p)) for p in refs]
        path = build_polygon(pts, closed=bool(closed))
    else:
        segs_raw = table.get("segments")
        if not isinstance(segs_raw, list) or not segs_raw:
            raise SceneError(f"{where}: needs 'segments' or 'polygon'")
        ctx = VarContext(0, 0, G, params=("t",))
        segs = []
        for j, s in enumerate(segs_raw):
            if not isinstance(s, dict) or "t" not in s:
                raise SceneError(f"{where}: segment {j} needs a 't = \"a..b\"' interval")
            t0, t1 = _parse_interval(s["t"], where)
            comps = []
            for l in range(chart.dim):
                text = _dsl(where, chart.name(l), s.get(chart.name(l), "0"))
                try:
                    comps.append(parse_superfunction(text, ctx))
                except SuperholError as e:
                    raise _context_error(f"{where} segment {j} {chart.name(l)}", e) from e
            extra = set(s) - {"t"} - {chart.name(l) for l in range(chart.dim)}
            if extra:
                raise SceneError(f"{where}: segment {j} has unknown keys {sorted(extra)}")
            segs.append(Segment(t0, t1, tuple(comps)))
        try:
            path = SPath(chart, G, tuple(segs), name)
        except SuperholError as e:
            raise _context_error(where, e) from e
        if closed and not path.is_closed():
            raise SceneError(f"{where}: declared closed but the end point differs from the start", "E_ENDPOINT")
    scene.closed[name] = bool(closed)
    return path


def load_scene(path) -> Scene:
    """Read and validate a TOML scene file."""
    path = Path(path)
    src = str(path)
    try:
        data = tomllib.loads(path.read_text())
    except FileNotFoundError as e:
        raise SceneError(f"scene file not found: {src}", "E_IO") from e
    except tomllib.TOMLDecodeError as e:
        raise SceneError(f"{src}: {e}", "E_SYNTAX") from e
    return scene_from_dict(data, src)


def scene_from_dict(data: dict, source: str = "<scene>") -> Scene:
    known = {"manifold", "bundle", "connection", "aux_connection", "points", "path", "gauge", "section", "sampling", "solver"}
    unknown = set(data) - known
    if unknown:
        raise SceneError(f"{source}: unknown sections {sorted(unknown)}")
    man = _table(data, "manifold", source)
    bun = _table(data, "bundle", source)
    chart = ChartSpec(
        _int(man, "even", 0, "[manifold]"),
        _int(man, "odd", 0, "[manifold]"),
        _int(man, "generators", 0, "[manifold]"),
    )
    p, q = _int(bun, "even", 0, "[bundle]"), _int(bun, "odd", 0, "[bundle]")
    if p + q == 0:
        raise SceneError(f"{source}: [bundle] needs a positive rank")
    frames = tuple([0] * p + [1] * q)
    scale = float(bun.get("scale", 1.0))
    mats = _parse_columns(_table(data, "connection", source), chart, frames, "[connection]", True)
    zero = [[chart.zero() for _ in range(p + q)] for _ in range(p + q)]
    try:
        conn = ConnectionSpec.from_matrices(chart, p, q, [mats.get(l, zero) for l in range(chart.dim)], scale)
    except SuperholError as e:
        raise _context_error("[connection]", e) from e

    aux = None
    aux_raw = _table(data, "aux_connection", source)
    if aux_raw:
        aux_raw = {k: _aux_text(_dsl("[aux_connection]", k, v), chart) for k, v in _flatten(aux_raw).items()}
        aux_raw = {re.sub(r"\.d_", ".", k): v for k, v in aux_raw.items()}
        aux_raw = {_aux_key(k, chart): v for k, v in aux_raw.items()}
        amats = _parse_columns(aux_raw, chart, tuple(chart.parity(l) for l in range(chart.dim)), "[aux_connection]", True)
        azero = [[chart.zero() for _ in range(chart.dim)] for _ in range(chart.dim)]
        try:
            aux = AuxConnectionSpec(chart, tuple(tuple(tuple(r) for r in amats.get(l, azero)) for l in range(chart.dim)))
        except SuperholError as e:
            raise _context_error("[aux_connection]", e) from e

    samp = _table(data, "sampling", source)
    box = samp.get("box", [])
    try:
        box = tuple((float(a), float(b)) for a, b in box)
    except (TypeError, ValueError) as e:
        raise SceneError(f"{source}: [sampling] box must be a list of [lo, hi] pairs") from e
    sampling = SamplingConfig(
        num_points=_int(samp, "num_points", 4, "[sampling]"),
        num_tangents=_int(samp, "num_tangents", 4, "[sampling]"),
        seed=_int(samp, "seed", 42, "[sampling]"),
        box=box,
        soul_scale=float(samp.get("soul_scale", 0.5)),
    )
    if box and len(box) != chart.even_dim:
        raise SceneError(f"{source}: [sampling] box needs one interval per even coordinate")
    scene = Scene(chart, conn, aux, sampling=sampling, source=source)
    scene.num_loops = _int(samp, "num_loops", 16, "[sampling]")
    if "extra_generators" in man:
        scene.extra_generators = _int(man, "extra_generators", 0, "[manifold]")
    solver = _table(data, "solver", source)
    for k in ("step", "series_terms", "quad_points", "tol"):
        if k in solver:
            scene.solver[k] = solver[k]

    for name, tbl in _table(data, "points", source).items():
        if not isinstance(tbl, dict):
            raise SceneError(f"[points.{name}] must be a table")
        coords = []
        for l in range(chart.dim):
            g = _grassmann(_dsl(f"[points.{name}]", chart.name(l), tbl.get(chart.name(l), "0")), scene.G, f"[points.{name}] {chart.name(l)}")
            coords.append(g)
        extra = set(tbl) - {chart.name(l) for l in range(chart.dim)}
        if extra:
            raise SceneError(f"[points.{name}]: unknown coordinates {sorted(extra)}", "E_REFERENCE")
        try:
            scene.points[name] = SPoint(chart, tuple(coords))
        except SuperholError as e:
            raise _context_error(f"[points.{name}]", e) from e

    for name, tbl in _table(data, "path", source).items():
        if not isinstance(tbl, dict):
            raise SceneError(f"[path.{name}] must be a table")
        scene.paths[name] = _parse_path(name, tbl, scene)

    for name, tbl in _table(data, "gauge", source).items():
        if not isinstance(tbl, dict):
            raise SceneError(f"[gauge.{name}] must be a table")
        V = _parse_columns(tbl, chart, frames, f"[gauge.{name}]", False).get(0)
        if V is None:
            raise SceneError(f"[gauge.{name}] is empty")
        try:
            gauge_transform(conn, V)
        except SuperholError as e:
            raise _context_error(f"[gauge.{name}]", e) from e
        scene.gauges[name] = V

    ctx = VarContext(chart.even_dim, chart.odd_dim, chart.base_generators, params=())
    for name, tbl in _table(data, "section", source).items():
        if not isinstance(tbl, dict):
            raise SceneError(f"[section.{name}] must be a table")
        gauge = tbl.get("gauge")
        if gauge is not None and gauge not in scene.gauges:
            raise SceneError(f"[section.{name}]: unknown gauge {gauge!r}", "E_REFERENCE")
        comps = [chart.zero() for _ in range(p + q)]
        for key, value in tbl.items():
            if key == "gauge":
                continue
            k = _frame_index(key, p + q, f"[section.{name}]")
            try:
                comps[k] = parse_superfunction(_dsl(f"[section.{name}]", key, value), ctx)
            except SuperholError as e:
                raise _context_error(f"[section.{name}] {key}", e) from e
        scene.sections[name] = (comps, gauge)
    return scene


def _aux_key(key: str, chart: ChartSpec) -> str:
    head, _, tail = key.partition(".")
    if re.fullmatch(r"x\d+|th\d+", tail):
        return f"{head}.T{_coord_index(chart, tail, '[aux_connection]') + 1}"
    return key


# ------------------------------------------------------------------------ output

def grassmann_json(c: np.ndarray) -> list:
    """Monomial list [[generator indices], coefficient] in canonical order."""
    nz = [int(k) for k in np.nonzero(c)[0]]
    nz.sort(key=lambda k: (bin(k).count("1"), mask_to_subset(k)))
    return [[list(mask_to_subset(k)), float(c[k])] for k in nz]


def matrix_json(M: SuperMatrix) -> list:
    return [[grassmann_json(M.data[a, b]) for b in range(M.size)] for a in range(M.size)]


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True)


def _emit(fmt: str, report: dict, text_lines: list[str]):
    if fmt == "json":
        click.echo(_dump({"schema": SCHEMA, **report}))
    else:
        for line in text_lines:
            click.echo(line)


def _pick(flag, scene_val, default):
    if flag is not None:
        return flag
    if scene_val is not None:
        return scene_val
    return default


class _Ctx:
    def __init__(self, scene: Scene, flags: dict):
        s = scene.solver
        self.scene = scene
        self.step = float(_pick(flags.get("step"), s.get("step"), DEFAULTS["step"]))
        self.series_terms = int(_pick(flags.get("series_terms"), s.get("series_terms"), DEFAULTS["series_terms"]))
        self.quad_points = int(_pick(flags.get("quad_points"), s.get("quad_points"), DEFAULTS["quad_points"]))
        self.tol = float(_pick(flags.get("tol"), s.get("tol"), DEFAULTS["tol"]))
        self.seed = int(_pick(flags.get("seed"), None, scene.sampling.seed))
        self.extra = int(_pick(flags.get("extra_generators"), scene.extra_generators, DEFAULTS["extra_generators"]))
        self.samples = int(_pick(flags.get("samples"), None, DEFAULTS["samples"]))
        self.r_max = int(_pick(flags.get("r_max"), None, DEFAULTS["r_max"]))
        if not self.step > 0 or not math.isfinite(self.step):
            raise SceneError(f"invalid step {self.step}")

    def opts(self, estimate_error: bool = True) -> TransportOptions:
        return TransportOptions(step=self.step, estimate_error=estimate_error)

    def sampling(self, num_tangents: int | None = None) -> SamplingConfig:
        s = self.scene.sampling
        nt = num_tangents if num_tangents is not None else s.num_tangents
        return SamplingConfig(s.num_points, nt, self.seed, s.box, s.soul_scale)


# ---------------------------------------------------------------------- commands

def cmd_transport(scene: Scene, flags: dict, path_name: str | None = None, method: str = "rk4") -> tuple[dict, list]:
    c = _Ctx(scene, flags)
    path = scene.path(path_name)
    if method == "series":
        P = path_ordered_series(path, scene.conn, c.series_terms, c.quad_points)
    else:
        P = parallel_transport(path, scene.conn, c.opts())
    report = {
        "command": "transport",
        "scene": scene.source,
        "path": path.name or path_name,
        "method": method,
        "matrix": matrix_json(P.matrix),
        "source": [grassmann_json(g.coeffs) for g in P.source.coords],
        "target": [grassmann_json(g.coeffs) for g in P.target.coords],
        "meta": P.meta,
    }
    lines = [f"transport along {report['path']} ({method})", P.matrix.text()]
    lines += [f"{k}: {v}" for k, v in P.meta.items()]
    return report, lines


def cmd_wilson(scene: Scene, flags: dict, path_name: str | None = None, gauge: str | None = None) -> tuple[dict, list]:
    c = _Ctx(scene, flags)
    path = scene.path(path_name)
    if not path.is_closed():
        raise EndpointMismatchError(f"path {path.name or path_name!r} is not closed")
    P = parallel_transport(path, scene.conn, c.opts(False)).matrix
    tr, st = P.trace(), P.supertrace()
    report = {
        "command": "wilson",
        "scene": scene.source,
        "path": path.name or path_name,
        "trace": grassmann_json(tr.coeffs),
        "supertrace": grassmann_json(st.coeffs),
    }
    lines = [f"tr P({report['path']}) = {tr.text()}", f"str P({report['path']}) = {st.text()}"]
    if gauge is not None:
        if gauge not in scene.gauges:
            raise SceneError(f"unknown gauge {gauge!r}; known: {sorted(scene.gauges)}", "E_REFERENCE")
        Pg = parallel_transport(path, gauge_transform(scene.conn, scene.gauges[gauge]), c.opts(False)).matrix
        trg, stg = Pg.trace(), Pg.supertrace()
        dev = float(np.max(np.abs(trg.coeffs - tr.coeffs)))
        sdev = float(np.max(np.abs(stg.coeffs - st.coeffs)))
        report.update(
            {
                "gauge": gauge,
                "gauged_trace": grassmann_json(trg.coeffs),
                "gauged_supertrace": grassmann_json(stg.coeffs),
                "max_deviation": dev,
                "supertrace_max_deviation": sdev,
            }
        )
        lines += [
            f"gauged by {gauge}: tr {trg.text()}, str {stg.text()}",
            f"max deviation: trace {dev:.3e}, supertrace {sdev:.3e}",
        ]
    return report, lines


def cmd_holonomy(scene: Scene, flags: dict, point: str | None = None) -> tuple[dict, list]:
    c = _Ctx(scene, flags)
    x = scene.point(point)
    npts = max(1, scene.sampling.num_points)
    hb: HolonomyBasis = sample_holonomy_algebra(
        scene.conn, x, c.extra, c.sampling(math.ceil(c.samples / npts)), c.opts(False)
    )
    report = {
        "command": "holonomy",
        "scene": scene.source,
        "point": point or "x",
        "extra_generators": c.extra,
        "generators": len(hb.generators),
        **hb.to_json(),
    }
    lines = [f"holonomy algebra at {report['point']} with {c.extra} extra generators: rank {hb.rank}"]
    lines += [f"  {m.text()}" for m in hb.basis]
    lines.append(f"closure rounds: {hb.closure_rounds}")
    return report, lines


def cmd_galaev(scene: Scene, flags: dict, point: str | None = None) -> tuple[dict, list]:
    c = _Ctx(scene, flags)
    x0 = tuple(float(v) for v in scene.point(point).body())
    opts = c.opts(False)
    direct = galaev_generators_direct(scene.conn, scene.aux, x0, c.r_max, c.sampling(), opts=opts)
    points = sorted({g.y0 for g in direct}) if direct else [x0]
    extracted = extract_all(scene.conn, scene.aux, x0, c.r_max, points, opts)
    rep = compare_spans(direct, extracted, c.tol)
    ch = scene.chart
    report = {
        "command": "galaev",
        "scene": scene.source,
        "x0": list(x0),
        "direct": [g.to_json(ch) for g in direct],
        "extracted": [g.to_json(ch) for g in extracted],
        "span_distance": rep.span_distance,
        "tol": c.tol,
        "r_max": c.r_max,
        "spans": rep.to_json(),
    }
    lines = [
        f"direct generators: {len(direct)} (rank {rep.direct_rank})",
        f"extracted generators: {len(extracted)} (rank {rep.extracted_rank})",
        f"span distance {rep.span_distance:.3e} (tol {c.tol:.1e}): {'agree' if rep.agree else 'DIFFER'}",
    ]
    return report, lines


# ------------------------------------------------------------------------ verify

@dataclass
class Check:
    name: str
    value: float
    threshold: float
    status: str  # pass, fail, skip
    note: str = ""

    def to_json(self) -> dict:
        out = {"name": self.name, "value": self.value, "threshold": self.threshold, "status": self.status}
        if self.note:
            out["note"] = self.note
        return out


def _check(name: str, value: float, threshold: float, note: str = "") -> Check:
    ok = bool(np.isfinite(value)) and value <= threshold
    return Check(name, float(value), threshold, "pass" if ok else "fail", note)


def _skew_defect(conn: ConnectionSpec) -> float:
    chart = conn.chart
    worst = 0.0
    for i in range(chart.dim):
        for j in range(chart.dim):
            A = curvature_frame(conn, i, j)
            B = curvature_frame(conn, j, i)
            s = -1.0 if chart.parity(i) * chart.parity(j) else 1.0
            if not sfm_is_zero(sfm_add(A, sfm_scale_real(B, s))):
                worst = 1.0
    return worst


def _holonomy_closure_defect(hb: HolonomyBasis) -> float:
    if hb.rank == 0:
        return 0.0
    B = np.stack([b.data.ravel() for b in hb.basis])
    Q, _ = np.linalg.qr(B.T)
    worst = 0.0
    for a in hb.basis:
        for b in hb.basis:
            v = sm_supercommutator(a, b).data.ravel()
            worst = max(worst, float(np.max(np.abs(v - Q @ (Q.T @ v)))))
    return worst


def _gauge_checks(name, path, conn, gauges, opts) -> list[Check]:
    out = []
    P = parallel_transport(path, conn, opts).matrix
    tr, st = P.trace(), P.supertrace()
    for gname, V in gauges.items():
        gauged = gauge_transform(conn, V)
        Pg = parallel_transport(path, gauged, opts).matrix
        Vx = gauged.gauge_at(path.start())
        out.append(_check(f"gauge conjugation [{name}, {gname}]", Pg.max_abs_diff(Vx @ P @ Vx.inverse()), 1e-8))
        sdev = float(np.max(np.abs(Pg.supertrace().coeffs - st.coeffs)))
        out.append(_check(f"supertrace gauge invariance [{name}, {gname}]", sdev, 1e-8))
        dev = float(np.max(np.abs(Pg.trace().coeffs - tr.coeffs)))
        if conn.even_rank == 0 or conn.odd_rank == 0:
            out.append(_check(f"trace gauge invariance [{name}, {gname}]", dev, 1e-8))
        else:
            # odd off-diagonal gauge blocks do not commute past the transport inside an ordinary trace
            out.append(Check(f"trace gauge invariance [{name}, {gname}]", dev, 1e-8, "info", "mixed-parity frame"))
    return out


def run_checks(scene: Scene, flags: dict) -> list[Check]:
    c = _Ctx(scene, flags)
    conn = scene.conn
    checks = [_check("curvature skew-symmetry", _skew_defect(conn), 0.0)]
    opts = c.opts(False)
    for name, path in scene.paths.items():
        P = parallel_transport(path, conn, opts)
        Pinv = parallel_transport(path.inverse(), conn, opts)
        ident = SuperMatrix.identity(conn.even_rank, conn.odd_rank, path.G)
        checks.append(_check(f"inverse [{name}]", (Pinv.matrix @ P.matrix).max_abs_diff(ident), 1e-9))
        a = parallel_transport(path.restricted(0.0, 0.37), conn, opts)
        b = parallel_transport(path.restricted(0.37, 1.0), conn, opts)
        checks.append(_check(f"split at 0.37 [{name}]", transport_concat(b, a).matrix.max_abs_diff(P.matrix), 1e-9))
        body = float(np.max(np.abs(P.matrix.body() - body_transport(path, conn, opts))))
        checks.append(_check(f"body transport [{name}]", body, 1e-10))
        bn = path_B_norm(path, conn)
        if bn <= 2.0:
            S = path_ordered_series(path, conn, c.series_terms, c.quad_points)
            checks.append(_check(f"series oracle [{name}]", S.matrix.max_abs_diff(P.matrix), 1e-6, f"|B| = {bn:.3g}"))
        else:
            checks.append(Check(f"series oracle [{name}]", float("nan"), 1e-6, "skip", f"|B| = {bn:.3g} > 2"))
        if scene.closed.get(name):
            checks += _gauge_checks(name, path, conn, scene.gauges, opts)
    if conn.chart.dim:
        npts = max(1, scene.sampling.num_points)
        hb = sample_holonomy_algebra(conn, scene.point(None), c.extra, c.sampling(math.ceil(c.samples / npts)), opts)
        checks.append(_check("holonomy bracket closure", _holonomy_closure_defect(hb), 1e-8, f"rank {hb.rank}"))
    for name, (X, gauge) in scene.sections.items():
        target = conn
        if gauge is not None:
            V = scene.gauges[gauge]
            target = gauge_transform(conn, V)
            col = sfm_mul(V, [[f] for f in X])
            X = [row[0] for row in col]
        rep = verify_parallel_invariance(target, X, scene.point(None), num_loops=scene.num_loops, seed=c.seed, opts=opts, tol=c.tol)
        checks.append(_check(f"parallel invariance [{name}]", rep.max_deviation, c.tol, f"{len(rep.loop_deviations)} loops"))
    if scene.G == 0 and conn.chart.dim:
        r = min(c.r_max, 1)
        x0 = tuple(float(v) for v in scene.point(None).body())
        direct = galaev_generators_direct(conn, scene.aux, x0, r, points=[x0], opts=opts)
        extracted = extract_all(conn, scene.aux, x0, r, [x0], opts)
        rep = compare_spans(direct, extracted, 1e-6)
        checks.append(_check(f"galaev spans (r <= {r})", rep.span_distance, 1e-6))
    return checks


def cmd_verify(scenes: list[Scene], flags: dict) -> tuple[dict, list, bool]:
    out, lines, ok = [], [], True
    for scene in scenes:
        checks = run_checks(scene, flags)
        good = all(ch.status != "fail" for ch in checks)
        ok &= good
        out.append({"scene": scene.source, "ok": good, "checks": [ch.to_json() for ch in checks]})
        lines.append(f"{scene.source}: {'ok' if good else 'FAILED'}")
        for ch in checks:
            val = "n/a" if not np.isfinite(ch.value) else f"{ch.value:.3e}"
            note = f"  ({ch.note})" if ch.note else ""
            lines.append(f"  [{ch.status:4}] {ch.name}: {val} <= {ch.threshold:.0e}{note}")
    return {"command": "verify", "scenes": out, "ok": ok}, lines, ok


# --------------------------------------------------------------------------- CLI

def _common(f):
    opts = [
        click.option("--step", type=float, default=None, help="RK4 step (default 1e-3)."),
        click.option("--series-terms", type=int, default=None, help="Terms of the iterated-integral series (default 6)."),
        click.option("--quad-points", type=int, default=None, help="Quadrature intervals per segment (default 512)."),
        click.option("--seed", type=int, default=None, help="Sampling seed (default 42)."),
        click.option("--extra-generators", type=int, default=None, help="Extra Grassmann generators (default 2)."),
        click.option("--samples", type=int, default=None, help="Ambrose-Singer probes (default 32)."),
        click.option("--tol", type=float, default=None, help="Tolerance (default 1e-8)."),
        click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text"),
        click.option("--r-max", type=int, default=None, help="Highest derivative order for galaev (default 2)."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _flags(kw: dict) -> dict:
    return {k: kw.get(k) for k in ("step", "series_terms", "quad_points", "seed", "extra_generators", "samples", "tol", "r_max")}


def _fail(fmt: str, err: SuperholError):
    if fmt == "json":
        click.echo(_dump({"schema": SCHEMA, "error": err.as_dict()}))
    else:
        click.echo(f"error [{err.code}]: {err.message}", err=True)
    sys.exit(err.exit_code)


def _run(fmt: str, fn):
    try:
        fn()
    except SuperholError as e:
        _fail(fmt, e)
    except (ZeroDivisionError, OverflowError, FloatingPointError, np.linalg.LinAlgError) as e:
        from .errors import NumericFailure

        _fail(fmt, NumericFailure(str(e)))


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Parallel transport, Wilson loops and holonomy algebras on superdomains."""


@main.command()
@click.argument("scene", type=click.Path(dir_okay=False))
@click.option("--path", "path_name", default=None, help="Name of a [path.<name>] section.")
@click.option("--method", type=click.Choice(["rk4", "series"]), default="rk4")
@_common
def transport(scene, path_name, method, fmt, **kw):
    """Parallel transport along a path."""
    _run(fmt, lambda: _emit(fmt, *cmd_transport(load_scene(scene), _flags(kw), path_name, method)))


@main.command()
@click.argument("scene", type=click.Path(dir_okay=False))
@click.option("--path", "path_name", default=None)
@click.option("--gauge", default=None, help="Also evaluate under a [gauge.<name>] transformation.")
@_common
def wilson(scene, path_name, gauge, fmt, **kw):
    """Super Wilson loop: trace of the transport around a closed path."""
    _run(fmt, lambda: _emit(fmt, *cmd_wilson(load_scene(scene), _flags(kw), path_name, gauge)))


@main.command()
@click.argument("scene", type=click.Path(dir_okay=False))
@click.option("--point", default=None, help="Base point name (default: point 'x' or the origin).")
@_common
def holonomy(scene, point, fmt, **kw):
    """Sampled holonomy algebra at an S-point."""
    _run(fmt, lambda: _emit(fmt, *cmd_holonomy(load_scene(scene), _flags(kw), point)))


@main.command()
@click.argument("scene", type=click.Path(dir_okay=False))
@click.option("--point", default=None, help="Point whose body is the base point.")
@_common
def galaev(scene, point, fmt, **kw):
    """Direct and extracted generators from covariant derivatives of the curvature."""
    _run(fmt, lambda: _emit(fmt, *cmd_galaev(load_scene(scene), _flags(kw), point)))


@main.command()
@click.argument("scenes", nargs=-1, required=True, type=click.Path(dir_okay=False))
@_common
def verify(scenes, fmt, **kw):
    """Run the invariant checks on one or more scenes."""

    def go():
        report, lines, ok = cmd_verify([load_scene(s) for s in scenes], _flags(kw))
        _emit(fmt, report, lines)
        if not ok:
            raise VerificationFailure("some checks failed")

    try:
        go()
    except VerificationFailure as e:
        if fmt != "json":
            click.echo(f"error [{e.code}]: {e.message}", err=True)
        sys.exit(e.exit_code)
    except SuperholError as e:
        _fail(fmt, e)


@main.command()
@click.argument("scene", type=click.Path(dir_okay=False))
def show(scene):
    """Print the scene with every expression in canonical form."""
    _run("json", lambda: click.echo(_dump({"schema": SCHEMA, **load_scene(scene).describe()})))


if __name__ == "__main__":
    main()

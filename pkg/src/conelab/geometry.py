"""Polygonal obstacles, model cones, and geometric-geodesic billiards.

A non-trapping check for the exterior of a polygon reduces to tracing
broken rays: straight segments, specular reflection at edge interiors,
and a two-branch continuation at vertices (the limits of rays passing
the vertex on either side).  Each convex or reflex corner also carries a
model cone C(S^1_rho) whose circumference is twice the exterior opening
angle; those cones are where the spectral machinery of :mod:`conelab.cone`
lives.

Conventions: obstacle loops are simple polygons stored counterclockwise,
a 2-vertex loop is the degenerate slit, and all tolerances are absolute
in the coordinate units of the obstacle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi
# Absolute distance at which a ray is declared to hit a vertex.
VERTEX_TOL = 1e-9
# Perpendicular offset used to resolve the two limit continuations at a vertex.
BRANCH_EPS = 1e-13
MAX_BRANCHES = 64

BOUNDARY_CONDITIONS = ("dirichlet", "neumann")


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class ConeDomain:
    """Euclidean cone C(S^1_rho): metric dr^2 + r^2 dtheta^2, theta in [0, rho)."""

    rho: float

    def __post_init__(self) -> None:
        if not (0.0 < self.rho <= 2.0 * TWO_PI):
            raise GeometryError(f"cone circumference rho={self.rho} outside (0, 4*pi]")

    @property
    def is_flat(self) -> bool:
        return abs(self.rho - TWO_PI) < 1e-14

    @property
    def is_slit(self) -> bool:
        return abs(self.rho - 2.0 * TWO_PI) < 1e-14

    def nu(self, j: int) -> float:
        """Scaling order 2*pi*|j|/rho of the angular mode e^(2*pi*i*j*theta/rho)."""
        return TWO_PI * abs(j) / self.rho


@dataclass(frozen=True)
class WedgeDomain:
    """Wedge {theta in [0, rho/2]} whose doubling is the cone C(S^1_rho).

    ``half_angle`` is the opening of the wedge itself, i.e. half the
    circumference of the doubled cone.
    """

    half_angle: float
    boundary_condition: str = "dirichlet"

    def __post_init__(self) -> None:
        if not (0.0 < self.half_angle <= TWO_PI):
            raise GeometryError(f"wedge opening {self.half_angle} outside (0, 2*pi]")
        if self.boundary_condition not in BOUNDARY_CONDITIONS:
            raise GeometryError(f"unknown boundary condition {self.boundary_condition!r}")

    @property
    def rho(self) -> float:
        return 2.0 * self.half_angle

    @property
    def double(self) -> ConeDomain:
        return ConeDomain(self.rho)


def _signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_intersect(p0, p1, q0, q1) -> bool:
    """Proper intersection test for open segments (shared endpoints ignored)."""
    d1 = np.cross(q1 - q0, p0 - q0)
    d2 = np.cross(q1 - q0, p1 - q0)
    d3 = np.cross(p1 - p0, q0 - p0)
    d4 = np.cross(p1 - p0, q1 - p0)
    return bool((d1 * d2 < 0.0) and (d3 * d4 < 0.0))


@dataclass(frozen=True)
class PolygonObstacle:
    """Disjoint union of simple polygonal loops with per-loop boundary data.

    Loops are normalized to counterclockwise orientation on construction.
    A loop with exactly two vertices is the degenerate slit.
    """

    loops: tuple[np.ndarray, ...]
    boundary_conditions: tuple[str, ...]

    def __init__(self, loops, boundary_conditions=None) -> None:
        norm_loops = []
        for loop in loops:
            arr = np.asarray(loop, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise GeometryError("each loop must be an (n, 2) array of vertices")
            if arr.shape[0] == 2:
                if np.allclose(arr[0], arr[1]):
                    raise GeometryError("slit endpoints coincide")
            elif arr.shape[0] >= 3:
                if _signed_area(arr) < 0.0:
                    arr = arr[::-1].copy()
                if abs(_signed_area(arr)) < 1e-14:
                    raise GeometryError("degenerate loop with vanishing area")
            else:
                raise GeometryError("a loop needs >= 3 vertices (or exactly 2 for a slit)")
            arr.setflags(write=False)
            norm_loops.append(arr)
        if boundary_conditions is None:
            boundary_conditions = ["dirichlet"] * len(norm_loops)
        bcs = tuple(str(bc) for bc in boundary_conditions)
        if len(bcs) != len(norm_loops):
            raise GeometryError("one boundary condition per loop required")
        for bc in bcs:
            if bc not in BOUNDARY_CONDITIONS:
                raise GeometryError(f"unknown boundary condition {bc!r}")
        object.__setattr__(self, "loops", tuple(norm_loops))
        object.__setattr__(self, "boundary_conditions", bcs)
        self._validate_disjoint()

    def _validate_disjoint(self) -> None:
        edges = self.edges()
        n = len(edges)
        for i in range(n):
            a0, a1, la, _ = edges[i]
            for k in range(i + 1, n):
                b0, b1, lb, _ = edges[k]
                same_loop_adjacent = la == lb and (
                    np.allclose(a1, b0) or np.allclose(b1, a0)
                )
                if same_loop_adjacent:
                    continue
                if _segments_intersect(a0, a1, b0, b1):
                    raise GeometryError("obstacle edges intersect")

    def edges(self) -> list[tuple[np.ndarray, np.ndarray, int, int]]:
        """All boundary edges as (start, end, loop_index, edge_index)."""
        out = []
        for li, loop in enumerate(self.loops):
            n = loop.shape[0]
            if n == 2:
                out.append((loop[0], loop[1], li, 0))
            else:
                for k in range(n):
                    out.append((loop[k], loop[(k + 1) % n], li, k))
        return out

    def all_vertices(self) -> np.ndarray:
        return np.concatenate([loop for loop in self.loops], axis=0)

    @property
    def diameter(self) -> float:
        v = self.all_vertices()
        d = np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)
        return float(d.max())

    def contains(self, points: np.ndarray, boundary_tol: float = 0.0) -> np.ndarray:
        """Strict interior test by winding number, loop by loop.

        Points within ``boundary_tol`` of an edge are reported as not
        contained (the closed exterior includes the boundary).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.zeros(pts.shape[0], dtype=bool)
        for loop in self.loops:
            if loop.shape[0] == 2:
                continue
            inside |= _winding_inside(loop, pts)
        if boundary_tol > 0.0:
            near = self.distance_to_boundary(pts) <= boundary_tol
            inside &= ~near
        return inside if np.asarray(points).ndim == 2 else inside

    def distance_to_boundary(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        best = np.full(pts.shape[0], np.inf)
        for a, b, _, _ in self.edges():
            ab = b - a
            denom = float(ab @ ab)
            t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
            proj = a + t[:, None] * ab
            best = np.minimum(best, np.linalg.norm(pts - proj, axis=1))
        return best


def _winding_inside(loop: np.ndarray, pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(pts.shape[0], dtype=bool)
    n = loop.shape[0]
    for k in range(n):
        x0, y0 = loop[k]
        x1, y1 = loop[(k + 1) % n]
        cond = (y0 <= y) != (y1 <= y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= cond & (x < np.where(cond, xcross, np.inf))
    return inside


# ---------------------------------------------------------------------------
# corner cones


@dataclass(frozen=True)
class CornerCone:
    loop_index: int
    vertex_index: int
    vertex: tuple[float, float]
    interior_angle: float
    opening: float           # exterior wedge opening = half_angle of the wedge
    cone: ConeDomain
    boundary_condition: str

    @property
    def wedge(self) -> WedgeDomain:
        return WedgeDomain(self.opening, self.boundary_condition)


def corner_cones(obstacle: PolygonObstacle) -> list[CornerCone]:
    """Model wedge/cone at every vertex: opening 2*pi - interior, rho = 2*opening."""
    out = []
    for li, loop in enumerate(obstacle.loops):
        bc = obstacle.boundary_conditions[li]
        n = loop.shape[0]
        if n == 2:
            for vi in range(2):
                out.append(
                    CornerCone(li, vi, tuple(loop[vi]), 0.0, TWO_PI,
                               ConeDomain(2.0 * TWO_PI), bc)
                )
            continue
        for vi in range(n):
            e_prev = loop[vi] - loop[vi - 1]
            e_next = loop[(vi + 1) % n] - loop[vi]
            turn = math.atan2(float(np.cross(e_prev, e_next)),
                              float(np.dot(e_prev, e_next)))
            interior = math.pi - turn
            opening = TWO_PI - interior
            out.append(
                CornerCone(li, vi, tuple(loop[vi]), interior, opening,
                           ConeDomain(2.0 * opening), bc)
            )
    return out


# ---------------------------------------------------------------------------
# geodesic tracing


@dataclass
class GeodesicTrace:
    """One branch of a broken geodesic.

    ``polyline`` holds the points of this branch including its start;
    ``events`` marks what happened at each interior polyline point after
    the first (reflection or vertex_hit) and at the last point (exit,
    vertex_hit, or budget).  A vertex event spawns exactly two children.
    """

    polyline: list[tuple[float, float]]
    events: list[str]
    children: list["GeodesicTrace"] = field(default_factory=list)
    truncated: bool = False

    def arc_length(self) -> float:
        pts = np.asarray(self.polyline)
        if pts.shape[0] < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))

    def walk(self):
        """Yield every branch in the tree, self first."""
        yield self
        for child in self.children:
            yield from child.walk()

    def branch_count(self) -> int:
        return sum(1 for _ in self.walk())

    def leaf_paths(self):
        """Yield (total_arc_length, last_event, path_points) per root-to-leaf path."""

        def rec(node, acc, prefix):
            length = acc + node.arc_length()
            pts = prefix + node.polyline
            if not node.children:
                last = node.events[-1] if node.events else "none"
                yield (length, last, pts)
            for child in node.children:
                yield from rec(child, length, pts)

        yield from rec(self, 0.0, [])


def _reflect(d: np.ndarray, edge_dir: np.ndarray) -> np.ndarray:
    e = edge_dir / np.linalg.norm(edge_dir)
    return 2.0 * (d @ e) * e - d


def _vertex_branch_directions(d, wall1, wall2) -> list[np.ndarray]:
    """Limits of reflected continuations for a ray ending exactly at a vertex.

    ``wall1``/``wall2`` are unit vectors along the two adjacent edges,
    pointing away from the vertex.  The two limits are obtained by local
    billiard simulation against the infinite walls with a one-sided
    perpendicular offset; the bounce sequence stabilizes as the offset
    shrinks, so a fixed tiny offset realizes the limit exactly up to
    roundoff in the final direction.
    """
    out = []
    perp = np.array([-d[1], d[0]])
    for side in (+1.0, -1.0):
        pos = -1e-6 * d + side * BRANCH_EPS * perp
        vel = d.copy()
        for _ in range(128):
            hit = None
            hit_t = np.inf
            for w in (wall1, wall2):
                n = np.array([-w[1], w[0]])
                dn = vel @ n
                if abs(dn) < 1e-300:
                    continue
                t = -(pos @ n) / dn
                if t <= 1e-16:
                    continue
                s = (pos + t * vel) @ w
                if s <= 0.0:
                    continue
                if t < hit_t:
                    hit_t, hit = t, w
            if hit is None:
                break
            pos = pos + hit_t * vel
            vel = _reflect(vel, hit)
        out.append(vel / np.linalg.norm(vel))
    return out


class _EdgeTable:
    """Flat numpy view of all obstacle edges for vectorized ray casting."""

    def __init__(self, obstacle: PolygonObstacle) -> None:
        edges = obstacle.edges()
        self.a = np.array([e[0] for e in edges])
        self.b = np.array([e[1] for e in edges])
        self.ab = self.b - self.a
        self.index = [(e[2], e[3]) for e in edges]
        self.obstacle = obstacle
        # adjacency: vertex key -> unit wall directions away from the vertex
        self.walls: dict[tuple[int, int], list[np.ndarray]] = {}
        for li, loop in enumerate(obstacle.loops):
            n = loop.shape[0]
            for vi in range(n):
                v = loop[vi]
                nbrs = []
                if n == 2:
                    nbrs = [loop[1 - vi]]
                else:
                    nbrs = [loop[(vi - 1) % n], loop[(vi + 1) % n]]
                ws = []
                for w in nbrs:
                    u = np.asarray(w, dtype=float) - v
                    ws.append(u / np.linalg.norm(u))
                self.walls[(li, vi)] = ws
        self.vertices = [
            (li, vi, loop[vi])
            for li, loop in enumerate(obstacle.loops)
            for vi in range(loop.shape[0])
        ]

    def first_hit(self, p: np.ndarray, d: np.ndarray, vertex_tol: float):
        """Earliest edge or vertex event along p + t*d, t > 0.

        Returns (t, kind, payload); kind in {"edge", "vertex", "none"}.
        """
        denom = np.cross(d, self.ab)
        rel = self.a - p
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.cross(rel, self.ab) / denom
            s = np.cross(rel, d) / denom
        ok = (np.abs(denom) > 1e-300) & (t > 1e-12) & (s >= -1e-12) & (s <= 1.0 + 1e-12)
        t_edge = np.inf
        edge_id = -1
        if np.any(ok):
            cand = np.where(ok)[0]
            k = cand[np.argmin(t[cand])]
            t_edge = float(t[k])
            edge_id = int(k)

        # vertex events: perpendicular pass within vertex_tol before the edge hit
        t_vert = np.inf
        vert_key = None
        for li, vi, v in self.vertices:
            rv = v - p
            tv = float(rv @ d)
            if tv <= 1e-12 or tv > t_edge + vertex_tol:
                continue
            perp = abs(float(np.cross(d, rv)))
            if perp <= vertex_tol and tv < t_vert:
                t_vert = tv
                vert_key = (li, vi)
        if vert_key is not None:
            return t_vert, "vertex", vert_key
        if edge_id >= 0:
            return t_edge, "edge", edge_id
        return np.inf, "none", None


def trace_geodesic(
    obstacle: PolygonObstacle,
    start,
    direction,
    max_length: float,
    vertex_tol: float = VERTEX_TOL,
    _table: _EdgeTable | None = None,
) -> GeodesicTrace:
    """Trace a broken geodesic with specular reflection and vertex branching.

    The trace stops a branch when its remaining arc-length budget is
    exhausted (event ``budget``) or when nothing is hit within the budget
    (event ``exit``).  The total number of branches is capped at
    ``MAX_BRANCHES``; hitting the cap sets ``truncated`` on the root.
    """
    p = np.asarray(start, dtype=float)
    d = np.asarray(direction, dtype=float)
    nd = np.linalg.norm(d)
    if nd == 0.0:
        raise GeometryError("zero direction")
    d = d / nd
    if max_length <= 0.0:
        raise GeometryError("max_length must be positive")
    if obstacle.contains(p[None, :], boundary_tol=1e-12)[0]:
        raise GeometryError("start point lies inside the obstacle")
    table = _table if _table is not None else _EdgeTable(obstacle)

    budget_box = {"branches": 0, "truncated": False}

    def rec(pos, vel, remaining) -> GeodesicTrace:
        budget_box["branches"] += 1
        node = GeodesicTrace(polyline=[tuple(pos)], events=[])
        while True:
            t, kind, payload = table.first_hit(pos, vel, vertex_tol)
            if t >= remaining:
                end = pos + remaining * vel
                node.polyline.append(tuple(end))
                node.events.append("exit" if not math.isfinite(t) else "budget")
                return node
            pos = pos + t * vel
            remaining -= t
            node.polyline.append(tuple(pos))
            if kind == "edge":
                node.events.append("reflection")
                vel = -_reflect(-vel, table.ab[payload])
            else:
                node.events.append("vertex_hit")
                if budget_box["branches"] + 2 > MAX_BRANCHES:
                    budget_box["truncated"] = True
                    return node
                walls = table.walls[payload]
                if len(walls) == 1:
                    # slit endpoint: both walls coincide
                    walls = [walls[0], walls[0]]
                for out_dir in _vertex_branch_directions(vel, walls[0], walls[1]):
                    node.children.append(rec(pos.copy(), out_dir, remaining))
                return node

    root = rec(p, d, float(max_length))
    root.truncated = budget_box["truncated"]
    return root


# ---------------------------------------------------------------------------
# non-trapping verdict


@dataclass(frozen=True)
class TrappingVerdict:
    status: str                      # "non_trapping" | "trapped" | "inconclusive"
    max_exit_length: float
    n_samples: int
    witness: tuple[tuple[float, float], tuple[float, float]] | None
    message: str


def check_non_trapping(
    obstacle: PolygonObstacle,
    ball_radius: float,
    horizon: float,
    n_points: int = 32,
    n_directions: int = 64,
    vertex_tol: float = VERTEX_TOL,
) -> TrappingVerdict:
    """Sampled non-trapping check inside the ball B(0, ball_radius).

    Start points form a cartesian grid clipped to the ball with obstacle
    points removed; directions are equispaced including angle 0, so
    axis-aligned bouncing orbits between parallel facing edges are in
    the sample set.  A branch that stays inside the ball for the full
    arc-length horizon is a trapping witness.  Branch-cap truncations
    without a witness give an inconclusive verdict.
    """
    verts = obstacle.all_vertices()
    if np.any(np.linalg.norm(verts, axis=1) >= ball_radius):
        raise GeometryError("ball does not contain the obstacle")
    table = _EdgeTable(obstacle)

    # cartesian sample grid clipped to the ball, obstacle excluded
    m = max(2, int(math.ceil(math.sqrt(n_points))))
    g = np.linspace(-ball_radius * 0.95, ball_radius * 0.95, m)
    xx, yy = np.meshgrid(g, g)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    keep = (np.linalg.norm(pts, axis=1) < ball_radius) & ~obstacle.contains(
        pts, boundary_tol=1e-9
    )
    far_enough = obstacle.distance_to_boundary(pts) > 1e-6
    pts = pts[keep & far_enough]

    angles = np.arange(n_directions) * (TWO_PI / n_directions)
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])

    max_exit = 0.0
    n_samples = 0
    any_truncated = False
    for p in pts:
        for d in dirs:
            n_samples += 1
            trace = trace_geodesic(obstacle, p, d, horizon, vertex_tol, _table=table)
            if trace.truncated:
                any_truncated = True
            for length, last, path in trace.leaf_paths():
                crossing = _ball_crossing_length(path, ball_radius)
                if crossing is not None:
                    max_exit = max(max_exit, crossing)
                elif length >= horizon - 1e-12:
                    return TrappingVerdict(
                        status="trapped",
                        max_exit_length=float("inf"),
                        n_samples=n_samples,
                        witness=(tuple(p), tuple(d)),
                        message="branch stayed inside the ball for the full horizon",
                    )
    if any_truncated:
        return TrappingVerdict(
            status="inconclusive",
            max_exit_length=max_exit,
            n_samples=n_samples,
            witness=None,
            message="branch cap hit before the horizon on some samples",
        )
    return TrappingVerdict(
        status="non_trapping",
        max_exit_length=max_exit,
        n_samples=n_samples,
        witness=None,
        message="all sampled branches left the ball before the horizon",
    )


def _ball_crossing_length(path_points, radius: float) -> float | None:
    """Arc length at which a polyline first leaves the ball, None if it never does."""
    pts = np.asarray(path_points, dtype=float)
    acc = 0.0
    for k in range(pts.shape[0] - 1):
        a, b = pts[k], pts[k + 1]
        seg = float(np.linalg.norm(b - a))
        if seg == 0.0:
            continue
        if np.linalg.norm(b) >= radius:
            d = (b - a) / seg
            # smallest s in [0, seg] with |a + s d| = radius
            pa = float(a @ d)
            disc = pa * pa - float(a @ a) + radius * radius
            s = -pa + math.sqrt(max(disc, 0.0))
            return acc + min(max(s, 0.0), seg)
        acc += seg
    return None


def check_three_collinear(
    obstacle: PolygonObstacle, tol: float = 1e-12
) -> list[tuple[int, int, int]]:
    """Vertex triples lying on a line realizable inside the closed exterior.

    Returns index triples into ``obstacle.all_vertices()``.  A triple
    counts only if the segment through all three points stays in the
    closed exterior (boundary contact allowed), so collinear triples
    along a single edge of the obstacle do not count unless the segment
    is itself part of the accessible boundary, which it is.
    """
    verts = obstacle.all_vertices()
    n = verts.shape[0]
    scale = max(obstacle.diameter, 1.0)
    bad = []
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                v1, v2, v3 = verts[i], verts[j], verts[k]
                area2 = abs(float(np.cross(v2 - v1, v3 - v1)))
                if area2 > tol * scale * scale:
                    continue
                # order the three points along the line
                axis = v3 - v1
                ts = sorted([(0.0, i), (float((v2 - v1) @ axis) / float(axis @ axis), j), (1.0, k)])
                lo, hi = verts[ts[0][1]], verts[ts[2][1]]
                probe_t = np.linspace(0.0, 1.0, 257)[1:-1]
                probe = lo + probe_t[:, None] * (hi - lo)
                if not np.any(obstacle.contains(probe, boundary_tol=1e-9)):
                    bad.append((i, j, k))
    return bad


# ---------------------------------------------------------------------------
# serialization


def obstacle_to_dict(obstacle: PolygonObstacle) -> dict:
    return {
        "loops": [
            {"vertices": loop.tolist(), "bc": bc}
            for loop, bc in zip(obstacle.loops, obstacle.boundary_conditions)
        ]
    }


def obstacle_from_dict(data: dict) -> PolygonObstacle:
    try:
        loops = [entry["vertices"] for entry in data["loops"]]
        bcs = [entry.get("bc", "dirichlet") for entry in data["loops"]]
    except (KeyError, TypeError) as exc:
        raise GeometryError(f"malformed obstacle description: {exc}") from exc
    return PolygonObstacle(loops, bcs)


def save_obstacle(obstacle: PolygonObstacle, path) -> None:
    with open(path, "w") as fh:
        json.dump(obstacle_to_dict(obstacle), fh, indent=2, sort_keys=True)


def load_obstacle(path) -> PolygonObstacle:
    with open(path) as fh:
        return obstacle_from_dict(json.load(fh))


def trace_rows(trace: GeodesicTrace) -> list[tuple]:
    """Flatten a trace tree to (branch, segment, x0, y0, x1, y1, event) rows."""
    rows = []

    def rec(node, branch_id):
        pts = node.polyline
        for s in range(len(pts) - 1):
            event = node.events[s] if s < len(node.events) else "none"
            rows.append((branch_id, s, *pts[s], *pts[s + 1], event))
        for ci, child in enumerate(node.children):
            rec(child, f"{branch_id}.{ci}")

    rec(trace, "0")
    return rows


def trace_to_svg(
    obstacle: PolygonObstacle, traces: list[GeodesicTrace], path, size: int = 640
) -> None:
    """Standalone SVG with the obstacle filled and each trace as polylines."""
    pts = [np.asarray(t.polyline) for root in traces for t in root.walk()]
    allpts = np.concatenate([obstacle.all_vertices()] + pts, axis=0)
    lo = allpts.min(axis=0) - 0.5
    hi = allpts.max(axis=0) + 0.5
    span = float(max(hi - lo))
    scale = size / span

    def xy(p):
        return (
            (p[0] - lo[0]) * scale,
            size - (p[1] - lo[1]) * scale,
        )

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for loop in obstacle.loops:
        coords = " ".join(f"{xy(p)[0]:.2f},{xy(p)[1]:.2f}" for p in loop)
        if loop.shape[0] == 2:
            parts.append(
                f'<polyline points="{coords}" stroke="black" stroke-width="2" fill="none"/>'
            )
        else:
            parts.append(f'<polygon points="{coords}" fill="#d0d0d0" stroke="black"/>')
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    for ti, root in enumerate(traces):
        color = palette[ti % len(palette)]
        for node in root.walk():
            coords = " ".join(f"{xy(p)[0]:.2f},{xy(p)[1]:.2f}" for p in node.polyline)
            parts.append(
                f'<polyline points="{coords}" stroke="{color}" stroke-width="1" fill="none"/>'
            )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


# convenience constructors used across the test and report suites

def square_obstacle(side: float = 1.0, center=(0.0, 0.0), bc: str = "dirichlet") -> PolygonObstacle:
    h = side / 2.0
    cx, cy = center
    verts = [[cx - h, cy - h], [cx + h, cy - h], [cx + h, cy + h], [cx - h, cy + h]]
    return PolygonObstacle([verts], [bc])


def equilateral_triangle(side: float = 1.0, center=(0.0, 0.0), bc: str = "dirichlet") -> PolygonObstacle:
    r = side / math.sqrt(3.0)
    cx, cy = center
    verts = [
        [cx + r * math.cos(a), cy + r * math.sin(a)]
        for a in (math.pi / 2, math.pi / 2 + TWO_PI / 3, math.pi / 2 + 2 * TWO_PI / 3)
    ]
    return PolygonObstacle([verts], [bc])


def slit_obstacle(length: float = 1.0, center=(0.0, 0.0), angle: float = 0.0, bc: str = "dirichlet") -> PolygonObstacle:
    h = length / 2.0
    c, s = math.cos(angle), math.sin(angle)
    cx, cy = center
    verts = [[cx - h * c, cy - h * s], [cx + h * c, cy + h * s]]
    return PolygonObstacle([verts], [bc])

"""Random trapezoidal truss populations.

Each structure is a Delaunay mesh of a symmetric trapezoid: boundary corner
points, jittered points along the four edges, and random interior points kept
apart by a rejection radius. Every structure in a population draws from its own
RNG stream derived from ``(seed, index)`` so it can be rebuilt in isolation.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import ConfigError, DegenerateMesh, NoSupportableNodes, PopulationError

DENSITY = 8015.0  # kg/m^3
AREA = 0.5  # m^2
MESH_RETRIES = 10
JITTER = 0.2


class SupportKind(str, enum.Enum):
    SIMPLY_SUPPORTED = "SimplySupported"
    CANTILEVERED = "Cantilevered"


@dataclass(frozen=True)
class BoundarySpec:
    bottom_span: float
    height: float
    top_span: float
    kind: SupportKind = SupportKind.SIMPLY_SUPPORTED

    def __post_init__(self):
        if not (self.bottom_span > self.top_span > 0 and self.height > 0):
            raise ConfigError(f"invalid trapezoid {self}")
        object.__setattr__(self, "kind", SupportKind(self.kind))

    @property
    def corners(self) -> np.ndarray:
        """Bottom-left, bottom-right, top-right, top-left."""
        b, t, h = self.bottom_span, self.top_span, self.height
        off = 0.5 * (b - t)
        return np.array([[0.0, 0.0], [b, 0.0], [off + t, h], [off, h]])

    @property
    def area(self) -> float:
        return 0.5 * (self.bottom_span + self.top_span) * self.height

    @property
    def scale(self) -> float:
        return self.bottom_span

    def contains(self, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(pts)
        inside = np.ones(len(pts), dtype=bool)
        c = self.corners
        eps = tol * self.scale
        for a, b in zip(c, np.roll(c, -1, axis=0)):
            edge = b - a
            rel = pts - a
            cross = edge[0] * rel[:, 1] - edge[1] * rel[:, 0]
            inside &= cross >= -eps * np.hypot(*edge)
        return inside

    def on_bottom(self, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        return np.abs(np.atleast_2d(pts)[:, 1]) <= tol * self.scale

    def on_left(self, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        c = self.corners
        return _dist_to_line(np.atleast_2d(pts), c[0], c[3]) <= tol * self.scale


@dataclass
class TrussStructure:
    """Planar pin-jointed truss.

    ``supports[i]`` holds the (fix_x, fix_y) flags of node ``i``; ``edges`` are
    sorted ``(i, j)`` pairs with ``i < j``.
    """

    nodes: np.ndarray
    edges: np.ndarray
    youngs_modulus: np.ndarray
    area: np.ndarray
    density: np.ndarray
    supports: np.ndarray
    excited_nodes: np.ndarray
    boundary: BoundarySpec | None = None
    zeta_anchors: tuple[float, float] = (0.02, 0.02)
    split: str = "train"

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def lengths(self) -> np.ndarray:
        d = self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def validate(self, e_range=(100e9, 300e9)):
        """Raise ``ConfigError`` if any structural invariant is broken."""
        n = self.n_nodes
        if self.edges.ndim != 2 or self.edges.shape[1] != 2:
            raise ConfigError("edges must be (E, 2)")
        if np.any(self.edges[:, 0] >= self.edges[:, 1]) or self.edges.max() >= n:
            raise ConfigError("edges must be sorted pairs of valid node indices")
        if len({tuple(e) for e in self.edges.tolist()}) != self.n_edges:
            raise ConfigError("duplicate edges")
        if np.any(self.lengths <= 0):
            raise ConfigError("zero-length edge")
        if not is_connected(n, self.edges):
            raise ConfigError("truss graph is disconnected")
        if self.boundary is not None and not self.boundary.contains(self.nodes).all():
            raise ConfigError("node outside boundary")
        if int(self.supports.sum()) < 3:
            raise ConfigError("fewer than 3 support constraints")
        for name in ("youngs_modulus", "area", "density"):
            v = getattr(self, name)
            if v.shape != (self.n_edges,) or np.any(v <= 0):
                raise ConfigError(f"{name} must be positive per edge")
        lo, hi = e_range
        if np.any(self.youngs_modulus < lo) or np.any(self.youngs_modulus > hi):
            raise ConfigError("Young's modulus out of range")

    def permuted(self, perm: np.ndarray) -> "TrussStructure":
        """Relabel nodes so that new node ``i`` is old node ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        e = np.sort(inv[self.edges], axis=1)
        order = np.lexsort((e[:, 1], e[:, 0]))
        return replace(
            self,
            nodes=self.nodes[perm],
            edges=e[order],
            youngs_modulus=self.youngs_modulus[order],
            area=self.area[order],
            density=self.density[order],
            supports=self.supports[perm],
            excited_nodes=np.sort(inv[self.excited_nodes]),
        )


@dataclass
class PopulationConfig:
    count: int = 100
    node_count_range: tuple[int, int] = (8, 40)
    bottom_span_range: tuple[float, float] = (20.0, 40.0)
    height_range: tuple[float, float] = (3.0, 6.0)
    top_ratio_range: tuple[float, float] = (0.4, 0.7)
    material_range: tuple[float, float] = (100e9, 300e9)
    zeta_first_range: tuple[float, float] = (0.02, 0.02)
    zeta_last_range: tuple[float, float] = (0.01, 0.03)
    kind: SupportKind = SupportKind.SIMPLY_SUPPORTED
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        self.kind = SupportKind(self.kind)
        if self.count < 1:
            raise ConfigError("count must be >= 1")
        for name in ("node_count_range", "bottom_span_range", "height_range",
                     "top_ratio_range", "material_range", "zeta_first_range",
                     "zeta_last_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: min > max")
            setattr(self, name, (lo, hi))
        if self.node_count_range[0] < 4:
            raise ConfigError("need at least 4 nodes per truss")
        if not (0 < self.top_ratio_range[0] and self.top_ratio_range[1] < 1):
            raise ConfigError("top_ratio_range must lie in (0, 1)")
        if not 0.0 <= self.train_fraction <= 1.0:
            raise ConfigError("train_fraction must lie in [0, 1]")

    @property
    def train_count(self) -> int:
        return int(round(self.train_fraction * self.count))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["kind"] = self.kind.value
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationConfig":
        known = {k: (tuple(v) if isinstance(v, list) else v)
                 for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _dist_to_line(pts, a, b):
    d = b - a
    rel = pts - a
    return np.abs(d[0] * rel[:, 1] - d[1] * rel[:, 0]) / np.hypot(*d)


def is_connected(n: int, edges: np.ndarray) -> bool:
    if n == 0:
        return False
    adj = [[] for _ in range(n)]
    for i, j in np.asarray(edges).tolist():
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        for v in adj[stack.pop()]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == n


def _edge_segments(boundary: BoundarySpec, target: int) -> list[int]:
    """Segment counts for bottom, right, top, left edges."""
    c = boundary.corners
    lengths = np.hypot(*(np.roll(c, -1, axis=0) - c).T)
    perimeter = lengths.sum()
    best = None
    for h in np.geomspace(perimeter / 4.0, perimeter / (4.0 * target), 400):
        segs = [max(1, int(round(L / h))) for L in lengths]
        n_b = sum(segs)  # a closed loop has as many points as segments
        inner = boundary.area - 0.5 * perimeter * h
        n_i = max(0, int(round(inner / (0.866 * h * h))))
        score = abs(n_b + n_i - target) + (1000 if n_b > target else 0)
        if best is None or score < best[0]:
            best = (score, segs)
    return best[1]


def _boundary_points(boundary: BoundarySpec, segs, rng) -> np.ndarray:
    c = boundary.corners
    pts = [c]
    for k, n_seg in enumerate(segs):
        a, b = c[k], c[(k + 1) % 4]
        if n_seg < 2:
            continue
        t = np.arange(1, n_seg) / n_seg
        t = t + rng.uniform(-JITTER, JITTER, size=t.shape) / n_seg
        pts.append(a + t[:, None] * (b - a))
    return np.vstack(pts)


def _interior_points(boundary: BoundarySpec, n_int: int, existing: np.ndarray,
                     radius: float, rng) -> np.ndarray:
    c = boundary.corners
    placed = []
    pool = existing
    attempts = 0
    while len(placed) < n_int and attempts < 500 * max(n_int, 1):
        attempts += 1
        p = rng.uniform([0.0, 0.0], [boundary.bottom_span, boundary.height])
        if not boundary.contains(p[None])[0]:
            continue
        if np.min(np.hypot(*(pool - p).T)) < radius:
            continue
        edge_d = min(_dist_to_line(p[None], c[k], c[(k + 1) % 4])[0] for k in range(4))
        if edge_d < 0.5 * radius:
            continue
        placed.append(p)
        pool = np.vstack([pool, p])
    return np.array(placed).reshape(-1, 2)


def triangulation_edges(simplices: np.ndarray) -> np.ndarray:
    e = np.vstack([simplices[:, [0, 1]], simplices[:, [1, 2]], simplices[:, [0, 2]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    return e


def mesh_truss(boundary: BoundarySpec, target_nodes: int, rng: np.random.Generator,
               ) -> TrussStructure:
    """Delaunay-mesh the trapezoid with roughly ``target_nodes`` nodes.

    The result carries placeholder materials (E = 200 GPa) and no supports; see
    :func:`assign_materials` and :func:`apply_supports`.
    """
    if target_nodes < 4:
        raise ConfigError("target_nodes must be >= 4")
    radius = 0.5 * np.sqrt(boundary.area / target_nodes)
    last_err = None
    for _ in range(MESH_RETRIES):
        segs = _edge_segments(boundary, target_nodes)
        bpts = _boundary_points(boundary, segs, rng)
        n_int = max(0, target_nodes - len(bpts))
        ipts = _interior_points(boundary, n_int, bpts, radius, rng)
        pts = np.vstack([bpts, ipts])
        n = len(pts)
        if not 0.8 * target_nodes <= n <= 1.2 * target_nodes:
            last_err = f"node count {n} too far from target {target_nodes}"
            continue
        try:
            tri = Delaunay(pts)
        except QhullError as exc:
            last_err = str(exc)
            continue
        simp = tri.simplices
        p = pts[simp]
        u, v = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        areas = 0.5 * np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
        if len(simp) == 0 or areas.min() < 1e-9 * boundary.area:
            last_err = "degenerate triangle"
            continue
        edges = triangulation_edges(simp)
        if len(np.unique(edges)) != n or not is_connected(n, edges):
            last_err = "mesh does not use every point"
            continue
        ne = len(edges)
        return TrussStructure(
            nodes=pts,
            edges=edges,
            youngs_modulus=np.full(ne, 200e9),
            area=np.full(ne, AREA),
            density=np.full(ne, DENSITY),
            supports=np.zeros((n, 2), dtype=bool),
            excited_nodes=np.zeros(0, dtype=int),
            boundary=boundary,
        )
    raise DegenerateMesh(f"gave up after {MESH_RETRIES} attempts: {last_err}")


def assign_materials(truss: TrussStructure, e_range: tuple[float, float],
                     rng: np.random.Generator) -> TrussStructure:
    lo, hi = e_range
    if not 0 < lo <= hi:
        raise ConfigError("Young's modulus range must lie in (0, inf)")
    ne = truss.n_edges
    return replace(
        truss,
        youngs_modulus=rng.uniform(lo, hi, size=ne) if hi > lo else np.full(ne, float(lo)),
        area=np.full(ne, AREA),
        density=np.full(ne, DENSITY),
    )


def apply_supports(truss: TrussStructure, kind: SupportKind | str) -> TrussStructure:
    """Constrain DOFs and pick the excited (free bottom-chord) nodes.

    SimplySupported pins the bottom-left corner and puts a vertical roller on the
    bottom-right corner. Cantilevered clamps every node on the left edge.
    """
    kind = SupportKind(kind)
    b = truss.boundary
    if b is None:
        raise NoSupportableNodes("structure has no boundary to locate supports on")
    pts = truss.nodes
    bottom = np.flatnonzero(b.on_bottom(pts))
    sup = np.zeros((truss.n_nodes, 2), dtype=bool)
    if kind is SupportKind.SIMPLY_SUPPORTED:
        if len(bottom) < 2:
            raise NoSupportableNodes("bottom chord has fewer than 2 nodes")
        xs = pts[bottom, 0]
        left, right = bottom[np.argmin(xs)], bottom[np.argmax(xs)]
        sup[left] = (True, True)
        sup[right] = (False, True)
    else:
        left_nodes = np.flatnonzero(b.on_left(pts))
        if len(left_nodes) == 0:
            raise NoSupportableNodes("no nodes on the left edge")
        sup[left_nodes] = True
    excited = bottom[~sup[bottom, 1]]
    if len(excited) == 0:
        raise NoSupportableNodes("no unconstrained bottom nodes to excite")
    return replace(truss, supports=sup, excited_nodes=np.sort(excited),
                   boundary=replace(b, kind=kind))


def sample_structure(config: PopulationConfig, index: int) -> TrussStructure:
    """Build structure ``index`` of the population from its own RNG stream."""
    rng = np.random.default_rng([config.seed, index])
    bottom = rng.uniform(*config.bottom_span_range)
    height = rng.uniform(*config.height_range)
    top = bottom * rng.uniform(*config.top_ratio_range)
    lo, hi = config.node_count_range
    target = int(rng.integers(lo, hi + 1))
    boundary = BoundarySpec(bottom, height, top, config.kind)
    truss = mesh_truss(boundary, target, rng)
    truss = assign_materials(truss, config.material_range, rng)
    truss = apply_supports(truss, config.kind)
    zeta = (rng.uniform(*config.zeta_first_range), rng.uniform(*config.zeta_last_range))
    split = "train" if index < config.train_count else "test"
    return replace(truss, zeta_anchors=(float(zeta[0]), float(zeta[1])), split=split)


def generate_population(config: PopulationConfig) -> list[TrussStructure]:
    out = []
    for i in range(config.count):
        try:
            out.append(sample_structure(config, i))
        except (DegenerateMesh, NoSupportableNodes) as exc:
            raise PopulationError(i, exc) from exc
    return out

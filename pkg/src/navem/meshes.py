"""Polygonal meshes of the unit square: generators, text I/O and statistics.

Three families are available:

* ``rdqm`` -- randomly distorted quadrilaterals obtained from a Cartesian grid,
* ``vm`` -- clipped Voronoi tessellations with optional Lloyd smoothing,
* ``htm`` -- triangulations with equispaced hanging nodes on random edges.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, Voronoi

from .geometry import (
    REFERENCE_TRIANGLE,
    GeometryError,
    Polygon,
    collinear_flags,
    affine_from_triangles,
    inertial_map,
    polygon_metrics,
)

logger = logging.getLogger(__name__)

MESH_HEADER = "navem-mesh v1"


class MeshError(ValueError):
    """Raised for invalid mesh topology or infeasible generator parameters."""


@dataclass
class Mesh:
    vertices: np.ndarray
    elements: list
    boundary: np.ndarray = field(default=None)
    hanging: np.ndarray = field(default=None)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.elements = [np.asarray(e, dtype=np.int64) for e in self.elements]
        n = len(self.vertices)
        if self.hanging is None:
            self.hanging = np.zeros(n, dtype=bool)
        self.hanging = np.asarray(self.hanging, dtype=bool)
        if self.boundary is None:
            self.boundary = self._topological_boundary()
        self.boundary = np.asarray(self.boundary, dtype=bool)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def polygon(self, k: int) -> Polygon:
        idx = self.elements[k]
        P = Polygon(self.vertices[idx])
        # a node hanging on one element is a corner of its neighbours
        flags = self.hanging[idx] & collinear_flags(P)
        return Polygon(P.vertices, flags) if flags.any() else P

    def polygons(self):
        return [self.polygon(k) for k in range(self.n_elements)]

    @property
    def h(self) -> float:
        return max(p.diameter for p in self.polygons())

    def edge_map(self) -> dict:
        """``{(a, b) with a < b: [(element, local_edge), ...]}``."""
        edges: dict = {}
        for k, elem in enumerate(self.elements):
            m = len(elem)
            for i in range(m):
                a, b = int(elem[i]), int(elem[(i + 1) % m])
                edges.setdefault((min(a, b), max(a, b)), []).append((k, i))
        return edges

    def _topological_boundary(self) -> np.ndarray:
        flags = np.zeros(len(self.vertices), dtype=bool)
        for (a, b), owners in self.edge_map().items():
            if len(owners) == 1:
                flags[a] = flags[b] = True
        return flags

    def validate(self) -> None:
        for k in range(self.n_elements):
            self.polygon(k)
        for key, owners in self.edge_map().items():
            if len(owners) > 2:
                raise MeshError(f"edge {key} is shared by {len(owners)} elements")
        topo = self._topological_boundary()
        if not np.array_equal(topo, self.boundary):
            raise MeshError("boundary flags are inconsistent with element adjacency")


def _quad_is_convex(pts: np.ndarray) -> bool:
    e = np.roll(pts, -1, axis=0) - pts
    cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    return bool(np.all(cross > 0))


def rdqm_mesh(n: int, distortion: float = 0.2, seed: int = 0, max_retries: int = 100) -> Mesh:
    """Cartesian ``n x n`` grid with interior vertices moved by at most ``distortion`` cells."""
    if n < 1:
        raise MeshError("grid size must be >= 1")
    if not 0 <= distortion < 0.5:
        raise MeshError("distortion must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    h = 1.0 / n
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    elements = [
        np.array([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)])
        for j in range(n)
        for i in range(n)
    ]
    cells_of = {}
    for k, e in enumerate(elements):
        for v in e:
            cells_of.setdefault(int(v), []).append(k)
    if distortion > 0:
        for i in range(1, n):
            for j in range(1, n):
                v = vid(i, j)
                base = verts[v].copy()
                for _ in range(max_retries):
                    verts[v] = base + rng.uniform(-distortion * h, distortion * h, size=2)
                    if all(_quad_is_convex(verts[elements[k]]) for k in cells_of[v]):
                        break
                else:
                    raise MeshError(f"could not perturb vertex {v} without tangling after {max_retries} tries")
    return Mesh(verts, elements)


def _clipped_voronoi_cells(points: np.ndarray):
    """Voronoi cells of ``points`` clipped to the unit square, via mirror images."""
    x, y = points[:, 0], points[:, 1]
    mirrored = np.vstack(
        [
            points,
            np.column_stack([-x, y]),
            np.column_stack([2.0 - x, y]),
            np.column_stack([x, -y]),
            np.column_stack([x, 2.0 - y]),
        ]
    )
    vor = Voronoi(mirrored)
    cells = []
    for k in range(len(points)):
        region = vor.regions[vor.point_region[k]]
        if -1 in region or len(region) < 3:
            raise MeshError("unbounded Voronoi cell inside the unit square")
        pts = vor.vertices[region].copy()
        pts[np.abs(pts) < 1e-10] = 0.0
        pts[np.abs(pts - 1.0) < 1e-10] = 1.0
        pts = np.clip(pts, 0.0, 1.0)
        ang = np.arctan2(pts[:, 1] - points[k, 1], pts[:, 0] - points[k, 0])
        cells.append(pts[np.argsort(ang)])
    return cells


def _cell_centroid(pts: np.ndarray) -> np.ndarray:
    return Polygon(pts).centroid


def vm_mesh(n_seeds: int, lloyd_iterations: int = 10, seed: int = 0, collapse: float = 0.08) -> Mesh:
    """Clipped Voronoi mesh of the unit square.

    Edges shorter than ``collapse / sqrt(n_seeds)`` are collapsed so that the
    elements keep a bounded edge ratio.
    """
    if n_seeds < 2:
        raise MeshError("need at least two Voronoi seeds")
    rng = np.random.default_rng(seed)
    points = rng.uniform(0.0, 1.0, size=(n_seeds, 2))
    for _ in range(lloyd_iterations):
        cells = _clipped_voronoi_cells(points)
        points = np.array([_cell_centroid(c) for c in cells])
    cells = _clipped_voronoi_cells(points)

    # global vertex numbering
    coords = np.vstack(cells)
    keys = np.round(coords / 1e-9).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    verts = coords[first]
    offsets = np.cumsum([0] + [len(c) for c in cells])
    elements = [inverse[offsets[k] : offsets[k + 1]] for k in range(len(cells))]

    # collapse short edges with a union-find
    tol = collapse / np.sqrt(n_seeds)
    parent = np.arange(len(verts))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def rank(p):
        on_x = p[0] in (0.0, 1.0)
        on_y = p[1] in (0.0, 1.0)
        return 2 if (on_x and on_y) else (1 if (on_x or on_y) else 0)

    for elem in elements:
        m = len(elem)
        for i in range(m):
            a, b = find(elem[i]), find(elem[(i + 1) % m])
            if a != b and np.linalg.norm(verts[a] - verts[b]) < tol:
                ra, rb = rank(verts[a]), rank(verts[b])
                if ra == 2 and rb == 2:
                    continue
                if ra < rb:
                    a, b = b, a
                    ra, rb = rb, ra
                if ra == rb:
                    if ra == 1 and not (
                        (verts[a][0] == verts[b][0] and verts[a][0] in (0.0, 1.0))
                        or (verts[a][1] == verts[b][1] and verts[a][1] in (0.0, 1.0))
                    ):
                        continue
                    verts[a] = 0.5 * (verts[a] + verts[b])
                parent[b] = a
    roots = np.array([find(a) for a in range(len(verts))])
    used, relabel = np.unique(roots, return_inverse=True)
    new_elements = []
    for elem in elements:
        e = relabel[elem]
        keep = [int(e[i]) for i in range(len(e)) if e[i] != e[(i + 1) % len(e)]]
        if len(keep) < 3:
            raise MeshError("edge collapse removed a whole cell")
        new_elements.append(np.array(keep))
    mesh = Mesh(verts[used], new_elements)
    for k in range(mesh.n_elements):
        if not mesh.polygon(k).is_convex(1e-9):
            logger.warning("Voronoi element %d is not convex after edge collapse", k)
    return mesh


def htm_mesh(
    n: int,
    edge_probability: float = 0.3,
    max_hanging: int = 10,
    seed: int = 0,
    jitter: float = 0.2,
) -> Mesh:
    """Triangular mesh with ``1..max_hanging`` equispaced hanging nodes on random edges.

    The base triangulation is the Delaunay triangulation of a jittered
    ``(n+1) x (n+1)`` grid.
    """
    if n < 1:
        raise MeshError("grid size must be >= 1")
    if not 0 <= edge_probability <= 1:
        raise MeshError("edge_probability must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    h = 1.0 / n
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    interior = np.all((pts > 1e-12) & (pts < 1 - 1e-12), axis=1)
    pts[interior] += rng.uniform(-jitter * h, jitter * h, size=(interior.sum(), 2))
    tri = Delaunay(pts)
    triangles = []
    for t in tri.simplices:
        a, b, c = pts[t]
        if (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]) < 0:
            t = t[[0, 2, 1]]
        triangles.append(t)

    verts = [p for p in pts]
    hanging = [False] * len(pts)
    inserted = {}
    edges = sorted({(min(a, b), max(a, b)) for t in triangles for a, b in zip(t, np.roll(t, -1))})
    for a, b in edges:
        if rng.uniform() < edge_probability:
            k = int(rng.integers(1, max_hanging + 1))
            ids = []
            for s in range(1, k + 1):
                verts.append(pts[a] + (pts[b] - pts[a]) * s / (k + 1))
                hanging.append(True)
                ids.append(len(verts) - 1)
            inserted[(a, b)] = ids
    elements = []
    for t in triangles:
        elem = []
        for a, b in zip(t, np.roll(t, -1)):
            elem.append(int(a))
            ids = inserted.get((min(a, b), max(a, b)), [])
            elem.extend(ids if a < b else ids[::-1])
        elements.append(np.array(elem))
    return Mesh(np.array(verts), elements, hanging=np.array(hanging))


FAMILIES = ("rdqm", "vm", "htm")


def generate_mesh(family: str, seed: int = 0, **params) -> Mesh:
    family = family.lower()
    if family == "rdqm":
        return rdqm_mesh(seed=seed, **params)
    if family == "vm":
        return vm_mesh(seed=seed, **params)
    if family == "htm":
        return htm_mesh(seed=seed, **params)
    raise MeshError(f"unknown mesh family {family!r}; expected one of {FAMILIES}")


def mesh_family(family: str, refinements: int = 4, seed: int = 0, start: int = 0) -> list:
    """The default four-mesh refinement sequence of a family."""
    family = family.lower()
    out = []
    for r in range(start, start + refinements):
        if family == "rdqm":
            out.append(rdqm_mesh(4 * 2**r, distortion=0.2, seed=seed + r))
        elif family == "vm":
            out.append(vm_mesh(16 * 4**r, lloyd_iterations=20, seed=seed + r))
        elif family == "htm":
            out.append(htm_mesh(4 * 2**r, edge_probability=0.3, seed=seed + r))
        else:
            raise MeshError(f"unknown mesh family {family!r}")
    return out


# ---------------------------------------------------------------- text format


def write_mesh(mesh: Mesh, path) -> None:
    lines = [MESH_HEADER, str(mesh.n_vertices)]
    for (x, y), b, hg in zip(mesh.vertices, mesh.boundary, mesh.hanging):
        lines.append(f"{float(x)!r} {float(y)!r} {int(b)} {int(hg)}")
    lines.append(str(mesh.n_elements))
    for e in mesh.elements:
        lines.append(" ".join(str(int(i)) for i in e))
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    path = Path(path)
    if not path.exists():
        raise MeshError(f"mesh file not found: {path}")
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    if not lines or lines[0] != MESH_HEADER:
        raise MeshError(f"{path}: expected header {MESH_HEADER!r}")
    try:
        nv = int(lines[1])
        rows = [ln.split() for ln in lines[2 : 2 + nv]]
        verts = np.array([[float(r[0]), float(r[1])] for r in rows])
        boundary = np.array([bool(int(r[2])) for r in rows])
        hanging = np.array([bool(int(r[3])) for r in rows])
        ne = int(lines[2 + nv])
        elements = [np.array([int(t) for t in ln.split()]) for ln in lines[3 + nv : 3 + nv + ne]]
    except (IndexError, ValueError) as exc:
        raise MeshError(f"{path}: malformed mesh file ({exc})") from exc
    if len(elements) != ne:
        raise MeshError(f"{path}: expected {ne} elements, found {len(elements)}")
    return Mesh(verts, elements, boundary=boundary, hanging=hanging)


# ---------------------------------------------------------------- statistics


def reference_map(P: Polygon):
    """Normalising map used for statistics: triangles (after dropping hanging
    nodes) go to the reference equilateral triangle, the rest are inertially mapped."""
    corners = np.flatnonzero(~P.hanging)
    if len(corners) == 3:
        return affine_from_triangles(P.vertices[corners], REFERENCE_TRIANGLE)
    return inertial_map(P)


def mesh_statistics(mesh_or_polygons) -> dict:
    """Min/max of area, diameter, anisotropic ratio and edge ratio, raw and mapped."""
    polys = mesh_or_polygons.polygons() if isinstance(mesh_or_polygons, Mesh) else list(mesh_or_polygons)
    if not polys:
        raise MeshError("no elements to summarise")
    keys = ("area", "diameter", "anisotropic_ratio", "edge_ratio")
    raw = {k: [] for k in keys}
    mapped = {k: [] for k in keys}
    for P in polys:
        for store, Q in ((raw, P), (mapped, P.transformed(reference_map(P)))):
            m = polygon_metrics(Q)
            for k in keys:
                store[k].append(getattr(m, k))
    nv = [len(P) for P in polys]
    out = {"n_elements": len(polys), "nv_min": min(nv), "nv_max": max(nv)}
    for label, store in (("raw", raw), ("mapped", mapped)):
        for k in keys:
            out[f"{label}_{k}_min"] = float(np.min(store[k]))
            out[f"{label}_{k}_max"] = float(np.max(store[k]))
    return out


def check_mesh(mesh: Mesh) -> Mesh:
    try:
        mesh.validate()
    except GeometryError as exc:
        raise MeshError(str(exc)) from exc
    return mesh

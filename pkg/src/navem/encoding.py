"""Polygon classification and network-input encoding.

General polygons with ``n`` vertices are encoded by an inertial map followed by
a similarity that puts the target vertex at ``(1, 0)``; the remaining
``2 (n - 1)`` coordinates form the input vector.  Triangles carrying hanging
nodes are reduced to at most six vertices, sorted into one of six
configurations, and mapped onto the reference equilateral triangle; the input
is then the list of curvilinear coordinates of the retained hanging nodes.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import (
    REFERENCE_TRIANGLE,
    AffineMap,
    GeometryError,
    Polygon,
    affine_from_triangles,
    collinear_flags,
    inertial_map,
    vertex_alignment_map,
)

logger = logging.getLogger(__name__)

MIN_CURVILINEAR_GAP = 1e-2

# (prev, self, next) pattern -> configuration; True marks a hanging node
CONFIGURATIONS = {
    (False, False, True): 1,
    (False, True, False): 2,
    (False, True, True): 3,
    (True, True, True): 4,
    (True, False, True): 5,
    (False, False, False): 6,
}
CONFIG_INPUT_DIM = {1: 1, 2: 1, 3: 2, 4: 3, 5: 2}


@dataclass(frozen=True)
class PolygonClass:
    """``kind`` is ``"nv"`` (general, ``n`` vertices), ``"hanging"`` (triangle with
    hanging nodes, ``n`` = configuration of the current vertex or 0) or ``"triangle"``."""

    kind: str
    n: int = 0

    @property
    def tag(self) -> str:
        if self.kind == "nv":
            return f"nv{self.n}"
        if self.kind == "hanging":
            return f"ht{self.n}" if self.n else "ht"
        return "tri"

    @property
    def input_dim(self) -> int:
        if self.kind == "nv":
            return 2 * (self.n - 1)
        if self.kind == "hanging":
            return CONFIG_INPUT_DIM.get(self.n, 0)
        return 4

    @property
    def uses_network(self) -> bool:
        return self.kind == "nv" or (self.kind == "hanging" and self.n in CONFIG_INPUT_DIM)

    @classmethod
    def from_tag(cls, tag: str) -> "PolygonClass":
        if tag == "tri":
            return cls("triangle", 3)
        if tag.startswith("nv"):
            return cls("nv", int(tag[2:]))
        if tag.startswith("ht"):
            return cls("hanging", int(tag[2:]))
        raise ValueError(f"unknown polygon class tag {tag!r}")


@dataclass(frozen=True)
class EncodedInput:
    """Network input for the pair (vertex ``j``, polygon ``E``).

    ``frame`` maps physical coordinates to the network frame, ``frame_polygon`` is
    the image of the relevant polygon (``E`` or its reduction) with the target
    vertex at index ``j_frame``.
    """

    cls: PolygonClass
    x0_coef: np.ndarray
    frame: AffineMap
    frame_polygon: Polygon
    j_frame: int
    reflection_applied: bool = False


def infer_hanging(P: Polygon) -> Polygon:
    return Polygon(P.vertices, collinear_flags(P))


def classify(P: Polygon) -> PolygonClass:
    flags = P.hanging
    if flags.any():
        flat = collinear_flags(P)
        bad = flags & ~flat
        if bad.any():
            raise GeometryError(f"vertices {np.flatnonzero(bad).tolist()} are flagged hanging but not collinear")
        if (~flags).sum() == 3:
            return PolygonClass("hanging", 0)
    if len(P) == 3:
        return PolygonClass("triangle", 3)
    return PolygonClass("nv", len(P))


def decode_general(x0_coef) -> Polygon:
    """Frame polygon from a general encoding (target vertex first, at ``(1, 0)``)."""
    x0 = np.asarray(x0_coef, dtype=float).reshape(-1, 2)
    return Polygon(np.vstack([[1.0, 0.0], x0]))


def encode_general(P: Polygon, j: int) -> EncodedInput:
    n = len(P)
    F = inertial_map(P)
    mapped = F(P.vertices)
    G = vertex_alignment_map(Polygon(mapped), j)
    frame = G.compose(F)
    verts = frame(P.vertices)
    order = [(j + s) % n for s in range(n)]
    x0 = verts[order[1:]].reshape(-1)
    frame_poly = Polygon(np.vstack([[1.0, 0.0], verts[order[1:]]]), P.hanging[order])
    cls = PolygonClass("triangle", 3) if (n == 3 and not P.hanging.any()) else PolygonClass("nv", n)
    return EncodedInput(cls, x0, frame, frame_poly, 0)


@dataclass(frozen=True)
class ReducedTriangle:
    polygon: Polygon
    j: int
    config: int
    reflection: bool
    kept: np.ndarray  # indices into the original polygon


def reduce_hanging_triangle(P: Polygon, j: int) -> ReducedTriangle:
    """Drop every hanging node except ``v_{j-1}, v_j, v_{j+1}`` and find the configuration."""
    n = len(P)
    flags = P.hanging
    keep = sorted({int(i) for i in np.flatnonzero(~flags)} | {(j - 1) % n, j, (j + 1) % n})
    sub = Polygon(P.vertices[keep], flags[keep])
    jj = keep.index(j)
    m = len(keep)
    pattern = (bool(sub.hanging[(jj - 1) % m]), bool(sub.hanging[jj]), bool(sub.hanging[(jj + 1) % m]))
    if pattern in CONFIGURATIONS:
        return ReducedTriangle(sub, jj, CONFIGURATIONS[pattern], False, np.array(keep))
    mirrored = pattern[::-1]
    if mirrored in CONFIGURATIONS:
        return ReducedTriangle(sub, jj, CONFIGURATIONS[mirrored], True, np.array(keep))
    raise GeometryError(f"no configuration matches pattern {pattern}")


def _curvilinear(p, a, b) -> float:
    e = b - a
    return float(np.dot(p - a, e) / np.dot(e, e))


def hanging_reference_polygon(config: int, x0_coef=()):
    """Reference-frame polygon of a configuration and the index of the target vertex."""
    P0, P1, P2 = REFERENCE_TRIANGLE
    t = [float(s) for s in np.ravel(x0_coef)]
    on12 = [P1 + s * (P2 - P1) for s in t]
    if config == 1:
        verts, flags, j = [P0, P1, on12[0], P2], [0, 0, 1, 0], 1
    elif config == 2:
        verts, flags, j = [P0, P1, on12[0], P2], [0, 0, 1, 0], 2
    elif config == 3:
        verts, flags, j = [P0, P1, *on12, P2], [0, 0, 1, 1, 0], 2
    elif config == 4:
        verts, flags, j = [P0, P1, *on12, P2], [0, 0, 1, 1, 1, 0], 3
    elif config == 5:
        verts = [P0, P0 + t[0] * (P1 - P0), P1, P1 + t[1] * (P2 - P1), P2]
        flags, j = [0, 1, 0, 1, 0], 2
    elif config == 6:
        verts, flags, j = [P0, P1, P2], [0, 0, 0], 0
    else:
        raise ValueError(f"unknown configuration {config}")
    return Polygon(np.array(verts), np.array(flags, dtype=bool)), j


def encode_hanging_triangle(reduced: ReducedTriangle) -> EncodedInput:
    """Map the reduced triangle onto the reference triangle with the hanging nodes
    on the vertical edge (configuration 5: target vertex at the lower right corner)."""
    Q, jq, config = reduced.polygon, reduced.j, reduced.config
    pre = AffineMap.identity()
    if reduced.reflection:
        pre = AffineMap(np.diag([1.0, -1.0]), np.zeros(2))
        Q = Q.transformed(pre)
        jq = len(Q) - 1 - jq
    m = len(Q)
    corners = [int(i) for i in np.flatnonzero(~Q.hanging)]
    if config == 6:
        b_idx = corners[(corners.index(jq) + 1) % 3]
    elif config == 5:
        b_idx = jq
    else:
        first_h = next(i for i in ((jq - 1) % m, jq, (jq + 1) % m) if Q.hanging[i])
        b_idx = first_h
        while Q.hanging[b_idx]:
            b_idx = (b_idx - 1) % m
    k = corners.index(b_idx)
    a_idx, c_idx = corners[(k - 1) % 3], corners[(k + 1) % 3]
    if config == 6:
        a_idx, b_idx, c_idx = jq, corners[(corners.index(jq) + 1) % 3], corners[(corners.index(jq) + 2) % 3]
    A, B, C = Q.vertices[a_idx], Q.vertices[b_idx], Q.vertices[c_idx]
    T = affine_from_triangles([A, B, C], REFERENCE_TRIANGLE)
    nodes = [(jq - 1) % m, jq, (jq + 1) % m]
    if config in (1, 2, 3, 4):
        x0 = [_curvilinear(Q.vertices[i], B, C) for i in nodes if Q.hanging[i]]
    elif config == 5:
        x0 = [_curvilinear(Q.vertices[nodes[0]], A, B), _curvilinear(Q.vertices[nodes[2]], B, C)]
    else:
        x0 = []
    x0 = np.array(x0)
    if len(x0) > 1 and config != 5 and np.any(np.diff(x0) <= 0):
        raise GeometryError("hanging nodes are not increasing along their edge")
    gaps = np.diff(np.concatenate([[0.0], np.sort(x0), [1.0]])) if config != 5 else np.concatenate([x0, 1 - x0])
    if len(x0) and gaps.min() < MIN_CURVILINEAR_GAP:
        warnings.warn("hanging nodes closer than the training floor; prediction is out of distribution", RuntimeWarning)
    frame_poly, j_frame = hanging_reference_polygon(config, x0)
    return EncodedInput(PolygonClass("hanging", config), x0, T.compose(pre), frame_poly, j_frame, reduced.reflection)


def encode(P: Polygon, j: int) -> EncodedInput:
    """Full ENCODE step for vertex ``j`` of ``P``."""
    cls = classify(P)
    if cls.kind == "hanging":
        return encode_hanging_triangle(reduce_hanging_triangle(P, j))
    return encode_general(P, j)


def config6_basis(points):
    """Linear hat functions of the reference triangle and their constant gradients."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = p[:, 0], p[:, 1]
    s3 = np.sqrt(3.0)
    values = np.column_stack([(1 - 2 * x) / 3, (x - s3 * y + 1) / 3, (x + s3 * y + 1) / 3])
    grads = np.array([[-2 / 3, 0.0], [1 / 3, -s3 / 3], [1 / 3, s3 / 3]])
    return values, grads

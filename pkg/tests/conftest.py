import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from navem.geometry import Polygon

# PASS/FAIL lines written by the acceptance criteria, echoed in the summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

settings.register_profile("default", max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def ellipse_polygon(rng, n, aspect=None, min_gap=0.3):
    """Convex polygon with vertices on a random ellipse, rotated and shifted."""
    while True:
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
        if gaps.min() > min_gap * 2 * np.pi / n:
            break
    a = 1.0
    b = aspect if aspect is not None else rng.uniform(0.4, 1.0)
    pts = np.column_stack([a * np.cos(ang), b * np.sin(ang)])
    th = rng.uniform(0, 2 * np.pi)
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    scale = rng.uniform(0.05, 2.0)
    return Polygon(scale * pts @ R.T + rng.uniform(-3, 3, 2))


@st.composite
def convex_polygons(draw, n_min=3, n_max=8):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(n_min, n_max))
    return ellipse_polygon(np.random.default_rng(seed), n)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_square():
    return Polygon([[0, 0], [1, 0], [1, 1], [0, 1]])


def triangle_mesh(n=4, distortion=0.3, seed=0):
    """Distorted quadrilateral grid with every quad split along a diagonal."""
    from navem.meshes import Mesh, generate_mesh

    quads = generate_mesh("rdqm", seed=seed, n=n, distortion=distortion)
    tris = []
    for k, el in enumerate(quads.elements):
        # alternate the diagonal between neighbouring cells
        a, b, c, e = np.roll(el, -(k % 2))
        tris += [[a, b, c], [a, c, e]]
    return Mesh(quads.vertices, tris, quads.boundary)


def p1_stiffness(mesh, D=np.eye(2)):
    """Closed-form P1 finite element stiffness for a constant tensor."""
    from scipy.sparse import coo_matrix

    rows, cols, vals = [], [], []
    for el in mesh.elements:
        x = mesh.vertices[el]
        M = np.column_stack([np.ones(3), x])
        grads = np.linalg.inv(M)[1:]  # 2 x 3 gradients of barycentric coordinates
        area = 0.5 * abs(np.linalg.det(M))
        K = area * grads.T @ D @ grads
        rows += list(np.repeat(el, 3))
        cols += list(np.tile(el, 3))
        vals += list(K.ravel())
    n = mesh.n_vertices
    return coo_matrix((vals, (rows, cols)), shape=(n, n)).toarray()

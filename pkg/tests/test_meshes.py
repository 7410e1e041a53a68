import numpy as np
import pytest

from navem.geometry import polygon_metrics
from navem.meshes import (
    MESH_HEADER,
    MeshError,
    check_mesh,
    generate_mesh,
    htm_mesh,
    mesh_family,
    mesh_statistics,
    rdqm_mesh,
    read_mesh,
    vm_mesh,
    write_mesh,
)


def test_undistorted_rdqm_is_uniform_squares():
    mesh = rdqm_mesh(2, distortion=0.0)
    assert mesh.n_elements == 4
    for P in mesh.polygons():
        m = polygon_metrics(P)
        assert m.area == pytest.approx(0.25, abs=1e-15)
        assert m.anisotropic_ratio == pytest.approx(1.0, abs=1e-12)
    stats = mesh_statistics(mesh)
    assert stats["raw_area_min"] == stats["raw_area_max"]


@pytest.mark.parametrize("family", ["rdqm", "vm", "htm"])
def test_generation_is_reproducible_and_valid(family):
    size = {"rdqm": {"n": 6}, "vm": {"n_seeds": 40}, "htm": {"n": 4}}[family]
    a = generate_mesh(family, seed=3, **size)
    b = generate_mesh(family, seed=3, **size)
    assert np.array_equal(a.vertices, b.vertices)
    assert all(np.array_equal(x, y) for x, y in zip(a.elements, b.elements))
    check_mesh(a)
    for P in a.polygons():
        assert polygon_metrics(P).area > 0


def test_rdqm_elements_are_convex():
    mesh = rdqm_mesh(8, distortion=0.3, seed=1)
    assert all(P.is_convex() for P in mesh.polygons())


def test_rdqm_rejects_large_distortion():
    with pytest.raises(MeshError):
        rdqm_mesh(4, distortion=0.6)


def test_vm_vertex_counts():
    mesh = vm_mesh(64, lloyd_iterations=20, seed=0)
    nv = [len(e) for e in mesh.elements]
    assert min(nv) >= 3 and max(nv) <= 9
    assert np.median(nv) in (5, 6)
    assert all(P.is_convex(1e-9) for P in mesh.polygons())


def test_htm_hanging_structure():
    mesh = htm_mesh(6, seed=2)
    assert mesh.hanging.any()
    for k, P in enumerate(mesh.polygons()):
        assert (~P.hanging).sum() == 3
        assert len(P) <= 3 + 3 * 10
    # hanging nodes lie strictly inside a geometric edge: never on two corners' line ends
    stats = mesh_statistics(mesh)
    assert stats["mapped_area_min"] == pytest.approx(1.299, abs=1e-3)
    assert stats["mapped_diameter_max"] == pytest.approx(np.sqrt(3), abs=1e-12)


def test_mapped_rdqm_diameter_is_one():
    stats = mesh_statistics(rdqm_mesh(6, seed=0))
    assert stats["mapped_diameter_min"] == pytest.approx(1.0, abs=1e-12)
    assert stats["mapped_diameter_max"] == pytest.approx(1.0, abs=1e-12)
    assert stats["mapped_anisotropic_ratio_max"] == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("family", ["rdqm", "vm", "htm"])
def test_round_trip_is_bit_exact(tmp_path, family):
    mesh = mesh_family(family, 1, seed=5)[0]
    path = tmp_path / "m.txt"
    write_mesh(mesh, path)
    assert path.read_text().splitlines()[0] == MESH_HEADER
    back = read_mesh(path)
    assert np.array_equal(mesh.vertices, back.vertices)
    assert np.array_equal(mesh.boundary, back.boundary)
    assert np.array_equal(mesh.hanging, back.hanging)
    assert all(np.array_equal(x, y) for x, y in zip(mesh.elements, back.elements))


def test_read_mesh_errors(tmp_path):
    with pytest.raises(MeshError, match="not found"):
        read_mesh(tmp_path / "missing.txt")
    bad = tmp_path / "bad.txt"
    bad.write_text("something else\n")
    with pytest.raises(MeshError, match="header"):
        read_mesh(bad)
    bad.write_text(f"{MESH_HEADER}\n2\n0 0 1 0\n")
    with pytest.raises(MeshError):
        read_mesh(bad)


def test_boundary_flags_match_unit_square():
    mesh = rdqm_mesh(5, seed=0)
    v = mesh.vertices
    on_box = np.isclose(v, 0).any(1) | np.isclose(v, 1).any(1)
    assert np.array_equal(on_box, mesh.boundary)


def test_family_is_refining():
    for fam in ("rdqm", "vm", "htm"):
        h = [m.h for m in mesh_family(fam, 3)]
        assert h[0] > h[1] > h[2]


def test_unknown_family():
    with pytest.raises(MeshError):
        generate_mesh("hex")

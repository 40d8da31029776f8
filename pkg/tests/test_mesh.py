import math

import numpy as np
import pytest

from grr.errors import DomainError, MeshParseError
from grr.mesh import (
    Mesh,
    discrete_bijectivity,
    mesh_quality,
    radius_ratio,
    read_mesh,
    write_mesh,
)
from grr.meshgen import (
    boundary_nodes,
    circle_holes_mesh,
    point_in_mesh,
    promote_to_p2,
    structured_rectangle,
)


def signed_area_oracle(tri):
    (x0, y0), (x1, y1), (x2, y2) = tri
    return 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))


def radius_ratio_oracle(tri):
    # inradius = area / semiperimeter, circumradius = abc / (4 area)
    a = math.dist(tri[1], tri[2])
    b = math.dist(tri[2], tri[0])
    c = math.dist(tri[0], tri[1])
    area = abs(signed_area_oracle(tri))
    s = 0.5 * (a + b + c)
    return (area / s) / (a * b * c / (4 * area))


def test_radius_ratio_equilateral_is_half():
    tri = np.array([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]])
    assert radius_ratio(tri) == pytest.approx(0.5, abs=1e-15)


def test_radius_ratio_matches_textbook_formula():
    rng = np.random.default_rng(3)
    tris = rng.normal(size=(50, 3, 2))
    got = radius_ratio(tris)
    want = [radius_ratio_oracle(t) for t in tris]
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_degenerate_triangle_ratio_zero():
    assert radius_ratio(np.array([[0, 0], [1, 0], [2, 0]])) == 0.0


def test_mesh_rejects_inverted_element():
    with pytest.raises(DomainError):
        Mesh(np.array([[0, 0], [0, 1], [1, 0.0]]), np.array([[0, 1, 2]]))


def test_mesh_quality_flags_inversion():
    mesh = structured_rectangle(4)
    q0, _ = mesh_quality(mesh)
    assert q0 > 0
    flipped = mesh.nodes * np.array([-1.0, 1.0])
    q1, per = mesh_quality(mesh, flipped)
    assert q1 < 0 and np.all(per < 0)


def test_discrete_bijectivity_identity_and_reflection():
    mesh = structured_rectangle(5)
    assert discrete_bijectivity(mesh) == (1.0, True)
    det, ok = discrete_bijectivity(mesh, lambda x: x * np.array([1.0, -2.0]))
    assert det == pytest.approx(-2.0) and not ok


def test_p2_affine_map_jacobian_constant():
    mesh = promote_to_p2(structured_rectangle(3))
    A = np.array([[2.0, 0.5], [0.0, 1.5]])
    det, ok = discrete_bijectivity(mesh, lambda x: x @ A.T, samples_per_elem=10)
    assert ok and det == pytest.approx(np.linalg.det(A), rel=1e-12)


def test_mesh_text_round_trip(tmp_path):
    mesh = promote_to_p2(structured_rectangle(3))
    path = tmp_path / "m.mesh"
    write_mesh(mesh, path)
    back = read_mesh(path)
    assert back.degree == 2
    np.testing.assert_array_equal(back.nodes, mesh.nodes)
    np.testing.assert_array_equal(back.connectivity, mesh.connectivity)


def test_read_mesh_reports_line(tmp_path):
    path = tmp_path / "bad.mesh"
    path.write_text("2 1 3 1\n0 0\n1 0\n0 x\n1 2 3\n")
    with pytest.raises(MeshParseError) as err:
        read_mesh(path)
    assert err.value.line == 4


def test_structured_ring_and_boundary():
    mesh = structured_rectangle(10, hole=((0.3, 0.3), (0.7, 0.7)))
    area = mesh.element_volumes().sum()
    assert area == pytest.approx(1.0 - 0.16, rel=1e-12)
    bn = boundary_nodes(mesh)
    # outer square has 40 boundary nodes, inner square 16
    assert len(bn) == 56


def test_circle_holes_mesh_area_and_membership():
    mesh = circle_holes_mesh(h=0.25)
    area = mesh.element_volumes().sum()
    assert area == pytest.approx(16 - 2 * math.pi * 0.5**2, rel=2e-2)
    inside = point_in_mesh(mesh, np.array([[-1.0, 0.0], [0.0, 0.0], [1.9, 1.9]]))
    assert inside.tolist() == [False, True, True]

import numpy as np
import pytest

from grr.errors import ConfigurationError, DomainError
from grr.mapspace import (
    Box,
    Mapping,
    MapSpace,
    expected_dimension,
    h2_inner,
    jacobian_det,
    map_eval,
)


@pytest.fixture(scope="module")
def space():
    return MapSpace(Box((0.0, 0.0), (2.0, 1.0)), 5)


def test_dimensions_match_closed_form():
    box = Box((0.0, 0.0), (1.0, 1.0))
    for n, bc, kind in [(4, "none", "full"), (5, "normal_zero", "full"), (6, "normal_zero", "potential")]:
        assert MapSpace(box, n, bc, kind).M == expected_dimension(2, n, bc, kind)
    # desk-scale sizes used by the experiments
    assert expected_dimension(2, 15) == 448
    assert expected_dimension(2, 20, convention="dimension") == 720


def test_basis_is_h2_orthonormal(space):
    np.testing.assert_allclose(space.gram_matrix, np.eye(space.M), atol=1e-10)
    # independent quadrature route for a few pairs
    rng = np.random.default_rng(0)
    for _ in range(3):
        a, b = rng.normal(size=(2, space.M))
        assert h2_inner((space, a), (space, b)) == pytest.approx(a @ b, rel=1e-9, abs=1e-9)


def test_normal_displacement_vanishes_on_faces(space):
    a = np.random.default_rng(1).normal(size=space.M)
    pts, normals = space.boundary_samples(50)
    u, _, _ = space.displacement(a, pts, order=0)
    assert np.abs((u * normals).sum(1)).max() < 1e-11


def test_potential_space_tangential_only():
    sp = MapSpace(Box((0.0, 0.0), (1.0, 1.0)), 6, kind="potential")
    a = np.random.default_rng(2).normal(size=sp.M)
    pts, normals = sp.boundary_samples(30)
    u, _, _ = sp.displacement(a, pts, order=0)
    assert np.abs((u * normals).sum(1)).max() < 1e-10


def test_derivatives_match_finite_differences(space):
    a = np.random.default_rng(3).normal(size=space.M) * 0.05
    phi = Mapping(space, a)
    x = np.array([[0.7, 0.3], [1.4, 0.8]])
    val, grad, hess = map_eval(phi, x)
    h = 1e-5
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (phi(x + e) - phi(x - e)) / (2 * h)
        np.testing.assert_allclose(grad[:, :, j], fd, atol=1e-8)
        _, gp, _ = map_eval(phi, x + e)
        _, gm, _ = map_eval(phi, x - e)
        np.testing.assert_allclose(hess[:, :, :, j], (gp - gm) / (2 * h), atol=1e-6)
    np.testing.assert_allclose(jacobian_det(phi, x), np.linalg.det(grad))


def test_fit_is_exact_inside_space(space):
    a = np.random.default_rng(4).normal(size=space.M)
    coef = space.fit(lambda p: space.displacement(a, p, order=0)[0])
    np.testing.assert_allclose(coef, a, atol=1e-9)


def test_points_outside_box_rejected(space):
    with pytest.raises(DomainError):
        space.basis_eval(np.array([[3.0, 0.5]]))


def test_degree_below_two_rejected():
    with pytest.raises(ConfigurationError):
        MapSpace(Box((0.0, 0.0), (1.0, 1.0)), 1)


def test_save_load_round_trip(tmp_path, space):
    path = tmp_path / "space.npz"
    space.save(path)
    back = MapSpace.load(path)
    assert back.checksum == space.checksum
    a = np.random.default_rng(5).normal(size=space.M)
    pts = np.array([[0.2, 0.9], [1.9, 0.1]])
    np.testing.assert_array_equal(Mapping(back, a)(pts), Mapping(space, a)(pts))
    phi = Mapping(space, a)
    phi.save(tmp_path / "map.npz")
    assert np.array_equal(Mapping.load(tmp_path / "map.npz", back).a, a)
    other = MapSpace(space.box, 4)
    with pytest.raises(ConfigurationError):
        Mapping.load(tmp_path / "map.npz", other)

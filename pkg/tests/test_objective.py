import numpy as np
import pytest

from grr.errors import ConfigurationError
from grr.mapspace import Box, Mapping, MapSpace, map_eval
from grr.meshgen import structured_rectangle
from grr.objective import (
    EXP_CLAMP,
    KINDS,
    Objective,
    ObjectiveConfig,
    anisotropy,
    expjac_density,
    expmesh_from_nodes,
    f_expmesh,
    linelastic_density,
    neohookean_density,
    penalty_h2,
)


@pytest.fixture(scope="module")
def setup():
    box = Box((0.0, 0.0), (1.0, 1.0))
    return MapSpace(box, 4), structured_rectangle(6)


def central_diff(fun, a, h=1e-6):
    g = np.empty_like(a)
    for m in range(len(a)):
        e = np.zeros_like(a)
        e[m] = h
        g[m] = (fun(a + e)[0] - fun(a - e)[0]) / (2 * h)
    return g


@pytest.mark.parametrize("kind", KINDS)
def test_gradient_matches_finite_differences(setup, kind):
    space, mesh = setup
    obj = Objective(ObjectiveConfig(kind=kind, mesh=mesh), space)
    a = np.random.default_rng(7).normal(size=space.M) * 0.02
    f, g = obj.value_grad(a)
    fd = central_diff(obj.value_grad, a)
    assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-8)


def test_similarity_has_unit_anisotropy():
    th = 0.4
    G = 1.7 * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    _, _, q = anisotropy(G[None], 10.0)
    assert q[0] == pytest.approx(1.0, abs=1e-14)


def test_stretch_anisotropy_formula():
    s = 3.0
    _, _, q = anisotropy(np.diag([s, 1.0])[None], 10.0)
    assert q[0] == pytest.approx(((s * s + 1) / s) ** 2 / 4)


def test_inverted_element_gets_large_anisotropy():
    val, _, q = anisotropy(np.diag([-1.0, 1.0])[None], 10.0)
    assert q[0] > 1e3 and np.isfinite(val[0])


def test_exponential_clamp_avoids_overflow():
    val, dval = expjac_density(np.array([-100.0]), 0.1, 0.0025)
    assert val[0] == pytest.approx(np.exp(EXP_CLAMP)) and dval[0] == 0.0
    val, _ = expjac_density(np.array([0.1]), 0.1, 0.0025)
    assert val[0] == 1.0


def test_linear_elastic_zero_for_infinitesimal_rotation():
    val, _ = linelastic_density(np.array([[0.0, -0.3], [0.3, 0.0]]), 0.5, 0.4)
    assert val == 0.0


def test_neohookean_infinite_when_inverted():
    val, dval = neohookean_density(np.diag([-1.0, 1.0])[None], 0.5, 0.4)
    assert np.isinf(val).all() and dval is None


def test_penalty_matches_quadrature_of_second_derivatives(setup):
    space, _ = setup
    a = np.random.default_rng(8).normal(size=space.M)
    phi = Mapping(space, a)
    pts, w = space.quadrature(space.degree + 3)
    _, _, hess = map_eval(phi, pts)
    oracle = 0.5 * float(w @ (hess**2).sum((1, 2, 3))) / space.box.volume
    assert penalty_h2(phi) == pytest.approx(oracle, rel=1e-10)


def test_mesh_functional_identity_value(setup):
    space, mesh = setup
    direct = expmesh_from_nodes(mesh, mesh.nodes, 10.0)
    assert f_expmesh(Mapping(space), mesh, 10.0) == pytest.approx(direct, rel=1e-14)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ObjectiveConfig(kind="exp_mesh")
    with pytest.raises(ConfigurationError):
        ObjectiveConfig(kind="nope")
    assert ObjectiveConfig(epsilon=0.2).c_exp == pytest.approx(0.005)

import math

import numpy as np
import pytest

from grr.errors import DomainError
from grr.geometry import (
    SampledBoundary,
    corner_constant,
    directed_distance,
    dist_bnd,
    distances_to,
    epsilon_cover,
    geo_error,
    hausdorff,
    tube_area,
    verify_boundary_bound,
)
from grr.mapspace import Box, Mapping, MapSpace


def unit_circle(n=2000, r=1.0):
    return SampledBoundary.from_curve(lambda t: np.column_stack([r * np.cos(t), r * np.sin(t)]), n)


def hausdorff_oracle(U, V):
    D = np.linalg.norm(U[:, None, :] - V[None, :, :], axis=2)
    return max(D.min(1).max(), D.min(0).max())


def test_hausdorff_matches_brute_force():
    rng = np.random.default_rng(0)
    U, V = rng.normal(size=(40, 2)), rng.normal(size=(55, 2))
    assert hausdorff(U, V) == pytest.approx(hausdorff_oracle(U, V), rel=1e-14)
    assert directed_distance(U, U) == 0.0


def test_polyline_refinement_is_close_to_exact_circle_distance():
    circ = unit_circle(400)
    pts = np.array([[0.0, 0.0], [2.0, 0.3], [0.5, 0.5]])
    exact = np.abs(np.linalg.norm(pts, axis=1) - 1.0)
    got = distances_to(pts, circ, refine=True)
    # polyline chord sagitta for 400 samples
    assert np.abs(got - exact).max() < 1.0 - math.cos(math.pi / 400) + 1e-12


def test_boundary_distance_of_concentric_circles():
    assert dist_bnd(unit_circle(r=1.1), unit_circle()) == pytest.approx(0.1, abs=1e-5)


def test_epsilon_cover_of_regular_polygon():
    n = 16
    t = 2 * np.pi * np.arange(n) / n
    pts = np.column_stack([np.cos(t), np.sin(t)])
    # farthest boundary point from the vertices sits half an arc away
    assert epsilon_cover(pts, unit_circle(16 * 200)) == pytest.approx(2 * math.sin(math.pi / (2 * n)), rel=1e-4)


def test_geo_error_matches_definition():
    rng = np.random.default_rng(1)
    x, y = rng.random((20, 2)), rng.random((30, 2))
    want = np.linalg.norm(x[:, None] - y[None], axis=2).min(1).max()
    assert geo_error(lambda p: p, x, y) == pytest.approx(want)


def test_corner_constant_values():
    assert corner_constant(math.pi / 4) == pytest.approx(1.0, abs=1e-12)
    alphas = np.linspace(0.05, math.pi / 2 - 1e-3, 40)
    vals = [corner_constant(a) for a in alphas]
    for a, v in zip(alphas, vals):
        assert v <= min(3.0, 1 / math.sin(a)) + 1e-12
        # exact maximum is never below a dense grid maximum
        assert v >= corner_constant(a, grid=20_001) - 1e-12
    with pytest.raises(DomainError):
        corner_constant(0.0)


def test_tube_area_of_circle():
    res = tube_area(unit_circle(4000), 0.1, n_mc=200_000, seed=3)
    exact = math.pi * (1.1**2 - 0.9**2)  # equals 2 delta |dU| for a circle
    assert res.bound == pytest.approx(exact, rel=1e-5)
    assert abs(res.estimate - exact) < 4 * res.stderr


def test_boundary_bound_identity_map():
    space = MapSpace(Box((-2.0, -2.0), (2.0, 2.0)), 3)
    circ = unit_circle(1000)
    x = circ.points[::50]
    rep = verify_boundary_bound(Mapping(space), circ, circ, x, x)
    assert rep.lhs < 1e-12 and rep.max_misfit == 0.0 and rep.holds
    assert rep.K == pytest.approx(1.0)


SWEEP = np.linspace(math.pi / 100, math.pi / 2, 50)


def test_corner_grid_maximum_within_lipschitz_bound():
    n = 10_000
    for a in SWEEP[:-1]:
        h = (1 / math.sin(a) - math.sin(a)) / (n - 1)
        gap = corner_constant(a) - corner_constant(a, grid=n)
        # every branch has slope at most max(1/cos a, 2 sin a, sqrt(1 + tan^2 a))
        assert -1e-12 <= gap <= h * (2 + 1 / math.cos(a))


@pytest.mark.xfail(strict=True, reason="a 1e4-point grid misses interior kinks by O(spacing * slope) ~ 1e-4")
def test_corner_grid_maximum_within_1e_6():
    gaps = [corner_constant(a) - corner_constant(a, grid=10_000) for a in SWEEP]
    assert max(gaps) < 1e-6

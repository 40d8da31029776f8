import numpy as np
import pytest

from grr.errors import ConfigurationError, DegenerateInputError
from grr.mapspace import Box, Mapping, MapSpace, h2_inner
from grr.pod import PodBasis, energy_curve, pod_build, reduce_space, snapshot_gramian


@pytest.fixture(scope="module")
def space():
    return MapSpace(Box((0.0, 0.0), (1.0, 1.0)), 4)


def low_rank_snapshots(space, rank, n, seed=0):
    rng = np.random.default_rng(seed)
    modes = rng.normal(size=(rank, space.M))
    return rng.normal(size=(n, rank)) @ modes


def test_gramian_routes_agree(space):
    U = low_rank_snapshots(space, 3, 6)
    C1 = snapshot_gramian(U, space)
    C2 = snapshot_gramian(U, space, method="quadrature")
    np.testing.assert_allclose(C1, C2, atol=1e-10 * np.abs(C1).max())


def test_rank_is_recovered(space):
    U = low_rank_snapshots(space, 4, 12)
    basis = pod_build(U, 1e-10, space)
    assert basis.n_modes == 4
    # modes are H2-orthonormal and reproduce every snapshot
    np.testing.assert_allclose(basis.modes.T @ basis.modes, np.eye(4), atol=1e-10)
    recon = (basis.modes @ basis.project(U.T))
    np.testing.assert_allclose(recon, U.T, atol=1e-9)


def test_energy_threshold_selects_smallest_m(space):
    lam = np.array([1.0, 1e-3, 1e-6, 1e-9])
    rng = np.random.default_rng(1)
    Q, _ = np.linalg.qr(rng.normal(size=(space.M, 4)))
    V, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    U = V @ (np.sqrt(lam)[:, None] * Q.T)  # Gramian U U^T has eigenvalues lam
    for tol, m in [(1e-2, 1), (1e-5, 2), (1e-8, 3)]:
        assert pod_build(U, tol, space).n_modes == m
    curve = energy_curve(pod_build(U, 1e-5, space))
    assert curve[-1] == (4, 0.0)
    assert all(a[1] >= b[1] for a, b in zip(curve, curve[1:]))


def test_reduced_space_reproduces_modes(space):
    U = low_rank_snapshots(space, 3, 8)
    basis = pod_build(U, 1e-12, space)
    red = reduce_space(space, basis)
    assert red.M == 3 and red.kind == "reduced"
    c = np.array([0.3, -0.2, 0.5])
    pts = np.random.default_rng(2).random((5, 2))
    np.testing.assert_allclose(Mapping(red, c)(pts), Mapping(space, basis.modes @ c)(pts), atol=1e-12)
    assert h2_inner((red, c), (red, c)) == pytest.approx(c @ c, rel=1e-9)


def test_save_load(tmp_path, space):
    basis = pod_build(low_rank_snapshots(space, 2, 5), 1e-5, space)
    basis.save(tmp_path / "b.npz")
    back = PodBasis.load(tmp_path / "b.npz", space)
    np.testing.assert_array_equal(back.modes, basis.modes)
    with pytest.raises(ConfigurationError):
        PodBasis.load(tmp_path / "b.npz", MapSpace(space.box, 3))


def test_degenerate_inputs(space):
    with pytest.raises(DegenerateInputError):
        pod_build(np.zeros((3, space.M)))
    with pytest.raises(ConfigurationError):
        pod_build(np.ones((3, space.M)), tol_pod=0)

"""Registration statements: Tykhonov, Morozov and inverted formulations."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, DomainError
from .mapspace import MapSpace, Mapping, jacobian_det
from .mesh import Mesh, discrete_bijectivity, mesh_quality
from .meshgen import point_in_mesh
from .objective import Objective, ObjectiveConfig
from .solver import SolverConfig, minimize_linconstr, minimize_nlconstr, minimize_qn

log = logging.getLogger(__name__)

METHODS = ("tykhonov", "morozov", "inverted")


@dataclass
class PointCloud:
    points: np.ndarray
    role: str = "reference"

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] < 1 or not np.all(np.isfinite(pts)):
            raise DomainError("point cloud must hold at least one finite point")
        if self.role not in ("reference", "target_sorted", "target_raw"):
            raise ConfigurationError(f"unknown point-cloud role {self.role!r}")
        self.points = pts

    def __len__(self):
        return len(self.points)


def _as_points(x):
    return x.points if isinstance(x, PointCloud) else np.atleast_2d(np.asarray(x, dtype=float))


@dataclass
class RegistrationProblem:
    space: MapSpace
    objective: ObjectiveConfig
    x_pts: object
    y_pts: object
    method: str = "tykhonov"
    xi: float = 1e-4
    delta: float = 1e-4
    delta_con: float = 1.0
    mesh: Mesh | None = None
    # optional (N, d) boolean mask selecting which point components are constrained
    component_mask: np.ndarray | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    jmin_grid: int = 100

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        x, y = _as_points(self.x_pts), _as_points(self.y_pts)
        if x.shape != y.shape:
            raise ConfigurationError("reference and target clouds must be paired (same shape)")
        if self.method == "tykhonov" and self.xi <= 0:
            raise ConfigurationError("xi must be positive")
        if self.method == "morozov" and self.delta <= 0:
            raise ConfigurationError("delta must be positive")
        if self.method == "inverted" and (self.xi <= 0 or self.delta_con <= 0):
            raise ConfigurationError("xi and delta_con must be positive")
        if self.method == "inverted" and self.objective.kind not in ("exp_jac", "exp_mesh"):
            raise ConfigurationError("the inverted formulation constrains exp_jac or exp_mesh")
        if self.mesh is None and self.objective.mesh is not None:
            self.mesh = self.objective.mesh


@dataclass
class RegistrationMetrics:
    misfit_inf: float
    misfit_2: float
    objective: float
    q_min: float = np.nan
    J_min: float = np.nan
    min_det: float = np.nan
    iterations: int = 0
    wall_time_s: float = 0.0
    converged: bool = False
    constraint_violation: float = 0.0

    def as_row(self) -> dict:
        return dict(self.__dict__)


def assemble_Bz(space: MapSpace, x_pts, y_pts, mask=None):
    """Point-evaluation operator in component-major order.

    Returns (B, b0, z) with B Phi = B @ a + b0 for Phi = N(.; a): rows are
    all first components of Phi(x_1..x_N), then all second components, etc.
    ``mask`` (N, d) keeps only selected (point, component) rows, in the same order.
    """
    x, y = _as_points(x_pts), _as_points(y_pts)
    if x.shape != y.shape:
        raise ConfigurationError("reference and target clouds must be paired")
    E = space.basis_eval(x, 0)  # (N, d, M)
    B = np.transpose(E, (1, 0, 2)).reshape(-1, space.M)
    b0 = x.T.reshape(-1)
    z = y.T.reshape(-1)
    if mask is not None:
        keep = np.asarray(mask, dtype=bool).T.reshape(-1)
        B, b0, z = B[keep], b0[keep], z[keep]
    return B, b0, z


def morph_mesh(mesh: Mesh, phi: Mapping) -> Mesh:
    """Deformed mesh with nodes Phi(x_i) and unchanged connectivity."""
    return mesh.with_nodes(phi(mesh.nodes))


def jmin_on_grid(phi: Mapping, mesh: Mesh | None = None, n: int = 100) -> float:
    """Minimum Jacobian determinant over an n x n grid on the box (restricted to the mesh)."""
    box = phi.space.box
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(box.lo, box.hi)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([g.ravel() for g in grids])
    if mesh is not None:
        pts = pts[point_in_mesh(mesh, pts)]
    if len(pts) == 0:
        return np.nan
    return float(jacobian_det(phi, pts).min())


class _DataTerm:
    def __init__(self, B, b0, z):
        self.B, self.r0 = B, b0 - z

    def residual(self, a):
        return self.B @ a + self.r0

    def __call__(self, a):
        r = self.residual(a)
        return 0.5 * float(r @ r), self.B.T @ r


def _data_precond(B, shift):
    """Fixed initial inverse Hessian (B^T B + shift I)^-1 of misfit plus scaled penalty.

    The penalty Hessian is close to the identity because the basis is
    H2-orthonormal, so this captures the stiff misfit directions exactly.
    """
    cf = scipy.linalg.cho_factor(B.T @ B + shift * np.eye(B.shape[1]))

    def H0(a, v, mem):
        return scipy.linalg.cho_solve(cf, v)
    return H0


def register(problem: RegistrationProblem, a0=None):
    """Solve one registration statement starting from a0 (identity by default).

    Returns (Phi*, SolveReport, RegistrationMetrics).
    """
    t0 = time.perf_counter()
    space = problem.space
    obj = Objective(problem.objective, space)
    B, b0, z = assemble_Bz(space, problem.x_pts, problem.y_pts, problem.component_mask)
    data = _DataTerm(B, b0, z)
    a_start = np.zeros(space.M) if a0 is None else np.asarray(a0, dtype=float)
    cfg = problem.solver

    if problem.method == "tykhonov":
        xi = problem.xi

        def F(a):
            fo, go = obj.value_grad(a)
            fd, gd = data(a)
            return xi * fo + fd, xi * go + gd

        a, rep = minimize_qn(F, a_start, cfg, precond=_data_precond(B, xi / space.box.volume))
    elif problem.method == "morozov":
        a, rep = minimize_linconstr(obj.value_grad, a_start, B, z - b0, problem.delta, cfg)
    else:
        xi = problem.xi

        def F(a):
            fp, gp = obj.penalty(a)
            fd, gd = data(a)
            return fd + xi * fp, gd + xi * gp

        a, rep = minimize_nlconstr(F, a_start, obj.term, problem.delta_con, cfg,
                                   precond=_data_precond(B, xi / space.box.volume))

    phi = Mapping(space, a)
    r = data.residual(a)
    fobj = obj.value_grad(a)[0]
    met = RegistrationMetrics(
        misfit_inf=float(np.max(np.abs(r))),
        misfit_2=float(np.linalg.norm(r)),
        objective=float(fobj),
        iterations=rep.iterations,
        converged=rep.converged,
        constraint_violation=rep.constraint_violation,
    )
    if problem.mesh is not None:
        if problem.mesh.dim == 2:
            met.q_min = mesh_quality(problem.mesh, phi)[0]
        met.min_det = discrete_bijectivity(problem.mesh, phi)[0]
    if space.dim == 2 and problem.jmin_grid:
        met.J_min = jmin_on_grid(phi, problem.mesh, problem.jmin_grid)
    met.wall_time_s = time.perf_counter() - t0
    rep.wall_time_s = met.wall_time_s
    return phi, rep, met


def register_with_cpd(x_ref, y_raw, template: RegistrationProblem, cpd_cfg=None, cpd_space=None,
                      a0=None):
    """Align the raw target cloud with CPD, then register with the aligned points.

    Returns (Phi*, {"cpd": CpdResult, "registration": SolveReport}, metrics).
    """
    from dataclasses import replace

    from .cpd import CpdConfig, cpd_run

    x = _as_points(x_ref)
    yr = _as_points(y_raw)
    res = cpd_run(x, yr, cpd_cfg or CpdConfig(), space=cpd_space)
    problem = replace(template, x_pts=x, y_pts=res.Y_aligned)
    phi, rep, met = register(problem, a0)
    return phi, {"cpd": res, "registration": rep}, met

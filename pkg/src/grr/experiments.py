"""Generators and drivers for the three benchmark problems.

- three-point: three interior points pulled along straight lines in the unit square
- ring-twist: the inner boundary of a square ring rotated about its center
- two-holes: a parametric family of domains with two deformed circular holes

Drivers return lists of metric rows (dicts); ``write_csv`` serializes them with
fixed 17-significant-digit formatting so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cpd import CpdConfig, cpd_run
from .errors import ConfigurationError, DomainError, InfeasibleError
from .geometry import SampledBoundary, geo_error, verify_boundary_bound
from .mapspace import Box, MapSpace, expected_dimension
from .mesh import Mesh
from .meshgen import boundary_nodes, circle_holes_mesh, structured_rectangle
from .objective import ObjectiveConfig
from .pod import pod_build, reduce_space
from .registration import RegistrationProblem, register

log = logging.getLogger(__name__)

# -- three-point ----------------------------------------------------------------------

THREE_POINT_X = np.array([[0.5, 0.5], [0.25, 0.25], [0.75, 0.25]])
THREE_POINT_Y = np.array([[0.25, 0.75], [1 / 16, 1 / 16], [0.5, 0.25]])


def gen_three_point(t: float):
    """Reference points and their targets interpolated at fraction t."""
    if not 0.0 <= t <= 1.0:
        raise DomainError("interpolation parameter t must lie in [0, 1]")
    x = THREE_POINT_X.copy()
    return x, (1.0 - t) * x + t * THREE_POINT_Y


# -- ring twist ------------------------------------------------------------------------

RING_CENTER = np.array([0.5, 0.5])
RING_HOLE = ((0.4, 0.4), (0.6, 0.6))


def ring_mesh(n: int = 20, degree: int = 1) -> Mesh:
    """Structured mesh of (0,1)^2 minus (0.4,0.6)^2; n must be a multiple of 5."""
    if n % 5:
        raise ConfigurationError("ring mesh resolution must be a multiple of 5 so the hole sits on grid lines")
    return structured_rectangle(n, hole=RING_HOLE, degree=degree)


def rotation(theta_deg: float) -> np.ndarray:
    th = math.radians(theta_deg)
    return np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])


def ring_constraint_points(mesh: Mesh, pin_outer: bool = True):
    """Inner boundary nodes plus (optionally) tangentially pinned outer boundary nodes.

    Returns (x_inner, x_outer, mask) with mask (N, 2) selecting the constrained
    components: both for inner nodes, the tangential one for outer nodes.
    Box corners are skipped (both components are already fixed there).
    """
    b = mesh.nodes[boundary_nodes(mesh)]
    lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    tol = 1e-9 * float(np.max(hi - lo))
    on_lo = np.abs(b - lo) < tol
    on_hi = np.abs(b - hi) < tol
    on_face = on_lo | on_hi  # (n, 2): on an x-face / y-face
    outer = on_face.any(axis=1)
    x_inner = b[~outer]
    if not pin_outer:
        return x_inner, np.empty((0, 2)), np.ones((len(x_inner), 2), dtype=bool)
    single = on_face[outer].sum(axis=1) == 1
    x_outer = b[outer][single]
    # on an x-face (x = const) the tangential component is y, and vice versa
    on_xface = on_face[outer][single][:, 0]
    mask = np.vstack([np.ones((len(x_inner), 2), dtype=bool),
                      np.column_stack([~on_xface, on_xface])])
    return x_inner, x_outer, mask


def gen_ring_twist(mesh: Mesh, theta_deg: float, pin_outer: bool = True):
    """Constraint pairs rotating the inner boundary by theta about the ring center.

    Returns (x_pts, y_pts, mask); outer pins (if any) follow the inner points
    and have y = x.
    """
    x_in, x_out, mask = ring_constraint_points(mesh, pin_outer)
    y_in = RING_CENTER + (x_in - RING_CENTER) @ rotation(theta_deg).T
    return np.vstack([x_in, x_out]), np.vstack([y_in, x_out]), mask


def ring_schedule(theta_max: float = 120.0, steps: int = 15):
    return [theta_max * (k + 1) / steps for k in range(steps)]


# -- two holes -------------------------------------------------------------------------

TWO_HOLE_BOX = Box((-2.0, -2.0), (2.0, 2.0))
TWO_HOLE_CENTERS = np.array([[-1.0, 0.0], [1.0, 0.0]])
TWO_HOLE_RADIUS = 0.5
NU_LO = np.array([0.1, 0.1, 0.0])
NU_HI = np.array([0.4, 0.4, math.pi / 4])


@dataclass(frozen=True)
class TwoHoleParams:
    """Shape parameters (nu_1, nu_2, nu_3) of each hole."""

    nu1: tuple
    nu2: tuple
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        for nu in (self.nu1, self.nu2):
            if len(nu) != 3:
                raise ConfigurationError("each hole needs three shape parameters")
            if self.check and (np.any(np.asarray(nu) < NU_LO - 1e-14) or np.any(np.asarray(nu) > NU_HI + 1e-14)):
                raise DomainError(f"shape parameters {nu} outside [0.1,0.4]^2 x [0,pi/4]")

    @property
    def mu(self) -> np.ndarray:
        return np.concatenate([self.nu1, self.nu2]).astype(float)

    @classmethod
    def from_mu(cls, mu, check=True):
        mu = np.asarray(mu, dtype=float)
        return cls(tuple(mu[:3]), tuple(mu[3:]), check)

    @classmethod
    def sample(cls, rng: np.random.Generator, n: int):
        lo, hi = np.tile(NU_LO, 2), np.tile(NU_HI, 2)
        return [cls.from_mu(lo + (hi - lo) * rng.random(6)) for _ in range(n)]


def hole_curve(center, nu, t):
    """Deformed circle of radius 1/2 about ``center`` at parameters t in [0, 2 pi)."""
    t = np.asarray(t, dtype=float)
    bump = 2e-3 * ((2 * np.pi - t) * t) ** 2
    x = np.cos(t) * (1 + nu[0] * np.cos(t + nu[2]) ** 2 + bump)
    y = np.sin(t) * (1 + nu[1] * np.sin(t + nu[2]) ** 2 + bump)
    return np.asarray(center) + TWO_HOLE_RADIUS * np.column_stack([x, y])


def reference_hole(center, t):
    t = np.asarray(t, dtype=float)
    return np.asarray(center) + TWO_HOLE_RADIUS * np.column_stack([np.cos(t), np.sin(t)])


def hole_parameters(n_v: int) -> np.ndarray:
    return 2 * np.pi * np.arange(n_v) / n_v


def gen_two_holes(mu: TwoHoleParams, n_v: int = 100, test_factor: int = 5):
    """Sorted reference/target pairs (N = 2 n_v) and dense target samples (test_factor n_v per hole)."""
    t = hole_parameters(n_v)
    tt = hole_parameters(test_factor * n_v)
    nus = (mu.nu1, mu.nu2)
    x = np.vstack([reference_hole(c, t) for c in TWO_HOLE_CENTERS])
    y = np.vstack([hole_curve(c, nu, t) for c, nu in zip(TWO_HOLE_CENTERS, nus)])
    y_test = np.vstack([hole_curve(c, nu, tt) for c, nu in zip(TWO_HOLE_CENTERS, nus)])
    return x, y, y_test


def unsorted_subset(y, rng: np.random.Generator, fraction: float = 0.8):
    """First fraction*N points of a random permutation of y."""
    q = int(round(fraction * len(y)))
    return y[rng.permutation(len(y))[:q]]


def is_simple_closed(points) -> bool:
    """True when the closed polyline through ``points`` has no self-intersection."""
    p = np.asarray(points, dtype=float)
    a, b = p, np.roll(p, -1, axis=0)
    n = len(p)

    def orient(p, q, r):
        return np.sign((q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1])
                       - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0]))

    A1, B1 = a[:, None], b[:, None]
    A2, B2 = a[None, :], b[None, :]
    o1, o2 = orient(A1, B1, A2), orient(A1, B1, B2)
    o3, o4 = orient(A2, B2, A1), orient(A2, B2, B1)
    cross = (o1 * o2 < 0) & (o3 * o4 < 0)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    adjacent = (np.abs(i - j) <= 1) | (np.abs(i - j) == n - 1)
    return not np.any(cross & ~adjacent)


# -- configuration ---------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Sizes and hyper-parameters; desk scale by default, or full scale."""

    seed: int = 0
    jobs: int = 1
    # three-point
    tp_n_lp: int = 15
    tp_mesh_n: int = 16
    tp_steps: int = 10
    tp_delta: float = 1e-6
    tp_epsilon: float = 0.1
    tp_kappa: float = 10.0
    # ring twist
    rt_n_lp: int = 15
    rt_mesh_n: int = 20
    rt_steps: int = 15
    rt_theta_max: float = 120.0
    rt_delta: float = 1e-6
    rt_epsilon: float = 0.05
    rt_kappa: float = 10.0
    rt_quad_order: int | None = None  # exp-jac Gauss points per direction; None -> 2 n_lp + 4
    # two holes
    th_n_lp: int = 20  # functions per direction
    th_h: float = 0.2
    th_n_v: int = 100
    th_n_train: int = 30
    th_n_test: int = 8
    th_kappa: float = 10.0
    th_xi: tuple = (1e-4, 1e-5)
    th_delta: tuple = (1e-3, 1e-4)
    th_xi_inverted: tuple = (1e-4, 1e-5)
    th_delta_con: float = 1.0
    th_tol_pod: float = 1e-5
    th_fraction: float = 0.8
    th_methods: tuple = ("tykhonov", "morozov", "inverted")

    @classmethod
    def full_scale(cls, **kw):
        base = dict(tp_n_lp=25, tp_mesh_n=32, rt_n_lp=25, rt_mesh_n=40, th_h=0.1,
                    th_n_train=100, th_n_test=20)
        base.update(kw)
        return cls(**base)


# -- metric rows -----------------------------------------------------------------------


def _row(**kw):
    return {k: (v.item() if isinstance(v, np.generic) else v) for k, v in kw.items()}


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(rows, path) -> None:
    """Write metric rows; columns are the union of keys in first-seen order."""
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([format_value(r.get(c, "")) for c in cols])


def summarize(rows, label, keys=("q_min", "geo_error", "iterations", "wall_time_s")):
    """avg/min/max of the given metrics over rows (the table format of the reports)."""
    out = {"label": label, "n": len(rows)}
    for k in keys:
        v = np.array([r[k] for r in rows], dtype=float)
        v = v[~np.isnan(v)]
        out[f"{k}_avg"] = float(v.mean()) if len(v) else np.nan
        out[f"{k}_min"] = float(v.min()) if len(v) else np.nan
        out[f"{k}_max"] = float(v.max()) if len(v) else np.nan
    for flag in ("converged", "infeasible"):
        if rows and flag in rows[0]:
            out[f"{flag}_frac"] = float(np.mean([bool(r[flag]) for r in rows]))
    return out


def _metric_row(met, **extra):
    return _row(**extra, misfit_inf=met.misfit_inf, misfit_2=met.misfit_2, objective=met.objective,
                q_min=met.q_min, J_min=met.J_min, min_det=met.min_det, iterations=met.iterations,
                converged=met.converged, constraint_violation=met.constraint_violation,
                wall_time_s=met.wall_time_s)


# -- three-point driver ----------------------------------------------------------------


def three_point_problem(space: MapSpace, mesh: Mesh, kind: str, t: float, cfg: ExperimentConfig):
    x, y = gen_three_point(t)
    obj = ObjectiveConfig(kind=kind, epsilon=cfg.tp_epsilon, kappa_msh=cfg.tp_kappa, mesh=mesh)
    return RegistrationProblem(space, obj, x, y, method="morozov", delta=cfg.tp_delta, mesh=mesh)


def run_three_point(cfg: ExperimentConfig | None = None, kinds=("h2", "exp_jac", "exp_mesh"),
                    space_kind: str = "full", n_lp: int | None = None, schedule=None):
    """Morozov registration at each t of the schedule, every solve started from the identity."""
    cfg = cfg or ExperimentConfig()
    space = MapSpace(Box((0.0, 0.0), (1.0, 1.0)), n_lp or cfg.tp_n_lp, kind=space_kind)
    mesh = structured_rectangle(cfg.tp_mesh_n)
    schedule = schedule if schedule is not None else [(k + 1) / cfg.tp_steps for k in range(cfg.tp_steps)]
    rows = []
    for kind in kinds:
        for t in schedule:
            _, _, met = register(three_point_problem(space, mesh, kind, t, cfg))
            rows.append(_metric_row(met, objective_kind=kind, space=space_kind, M=space.M, t=float(t),
                                    valid_mesh=bool(met.q_min > 0)))
            log.info("three-point %s t=%.2f q_min=%.3f J_min=%.3f", kind, t, met.q_min, met.J_min)
    return rows


def matched_potential_degree(full: MapSpace) -> int:
    """Potential-space degree whose dimension is closest to (not above) the full space's."""
    deg = 3
    while expected_dimension(full.dim, deg + 1, kind="potential") <= full.M:
        deg += 1
    return deg


def run_potential_vs_full(cfg: ExperimentConfig | None = None, kind: str = "exp_jac", t: float = 1.0):
    """Full space vs potential space of matched dimension on the three-point problem at t."""
    cfg = cfg or ExperimentConfig()
    full = MapSpace(Box((0.0, 0.0), (1.0, 1.0)), cfg.tp_n_lp)
    rows = run_three_point(cfg, (kind,), "full", cfg.tp_n_lp, [t])
    rows += run_three_point(cfg, (kind,), "potential", matched_potential_degree(full), [t])
    return rows


# -- ring-twist driver -----------------------------------------------------------------


def run_ring_twist(cfg: ExperimentConfig | None = None, kinds=("exp_jac", "exp_mesh")):
    """Continuation over the rotation schedule, warm-starting each step from the last."""
    cfg = cfg or ExperimentConfig()
    mesh = ring_mesh(cfg.rt_mesh_n)
    space = MapSpace(Box((0.0, 0.0), (1.0, 1.0)), cfg.rt_n_lp)
    rows = []
    for kind in kinds:
        # the twisted ring needs a denser rule than the default to keep J positive between nodes
        quad = (cfg.rt_quad_order or 2 * cfg.rt_n_lp + 4) if kind == "exp_jac" else None
        obj = ObjectiveConfig(kind=kind, epsilon=cfg.rt_epsilon, kappa_msh=cfg.rt_kappa, mesh=mesh,
                              quad_order=quad)
        a = None
        for theta in ring_schedule(cfg.rt_theta_max, cfg.rt_steps):
            x, y, mask = gen_ring_twist(mesh, theta)
            prob = RegistrationProblem(space, obj, x, y, method="morozov", delta=cfg.rt_delta, mesh=mesh,
                                       component_mask=mask)
            phi, _, met = register(prob, a)
            a = phi.a
            rows.append(_metric_row(met, objective_kind=kind, theta_deg=float(theta), M=space.M,
                                    valid_mesh=bool(met.q_min > 0)))
            log.info("ring-twist %s theta=%.0f q_min=%.3f J_min=%.3f", kind, theta, met.q_min, met.J_min)
    return rows


# -- two-hole driver -------------------------------------------------------------------


@dataclass
class TwoHoleSetup:
    space: MapSpace
    mesh: Mesh
    x_ref: np.ndarray
    omega_boundary: list  # SampledBoundary per hole (reference)
    train: list
    test: list


def two_hole_setup(cfg: ExperimentConfig) -> TwoHoleSetup:
    space = MapSpace(TWO_HOLE_BOX, cfg.th_n_lp, convention="dimension")
    mesh = circle_holes_mesh(h=cfg.th_h, centers=tuple(map(tuple, TWO_HOLE_CENTERS)), radius=TWO_HOLE_RADIUS)
    rng = np.random.default_rng(cfg.seed)
    train = TwoHoleParams.sample(rng, cfg.th_n_train)
    test = TwoHoleParams.sample(rng, cfg.th_n_test)
    x = gen_two_holes(train[0] if train else TwoHoleParams((0.1,) * 3, (0.1,) * 3), cfg.th_n_v)[0]
    tt = hole_parameters(5 * cfg.th_n_v)
    omega = [SampledBoundary(reference_hole(c, tt)) for c in TWO_HOLE_CENTERS]
    return TwoHoleSetup(space, mesh, x, omega, train, test)


def _two_hole_problem(setup: TwoHoleSetup, cfg: ExperimentConfig, method: str, param: float,
                      space: MapSpace | None = None, y=None):
    obj = ObjectiveConfig(kind="exp_mesh", kappa_msh=cfg.th_kappa, mesh=setup.mesh)
    kw = {"tykhonov": {"xi": param}, "morozov": {"delta": param},
          "inverted": {"xi": param, "delta_con": cfg.th_delta_con}}[method]
    return RegistrationProblem(space or setup.space, obj, setup.x_ref, y, method=method, mesh=setup.mesh,
                               jmin_grid=0, **kw)


def _split_metrics(setup, mu, phi, met, y_test, extra):
    row = _metric_row(met, **extra)
    row["geo_error"] = geo_error(phi, setup.x_ref, y_test)
    return row


def _boundary_bound_rows(setup, mu, phi, n_v):
    """Bound check for each hole: dist_bnd(Phi(reference hole); target hole) <= misfit + K eps."""
    x_all, y_all, _ = gen_two_holes(mu, n_v)
    tt = hole_parameters(5 * n_v)
    out = []
    for j, (c, nu) in enumerate(zip(TWO_HOLE_CENTERS, (mu.nu1, mu.nu2))):
        sl = slice(j * n_v, (j + 1) * n_v)
        v_bnd = SampledBoundary(hole_curve(c, nu, tt))
        out.append(verify_boundary_bound(phi, setup.omega_boundary[j], v_bnd, x_all[sl], y_all[sl]))
    return out


def _infeasible_row(method, param, space, t0):
    return _row(method=method, param=float(param), misfit_inf=np.nan, misfit_2=np.nan, objective=np.nan,
                q_min=np.nan, J_min=np.nan, min_det=np.nan, iterations=0, converged=False,
                constraint_violation=np.nan, wall_time_s=time.perf_counter() - t0, geo_error=np.nan,
                infeasible=True, M=space.M)


def _solve_sorted(args):
    setup, cfg, method, param, mu, space, a0 = args
    x, y, y_test = gen_two_holes(mu, cfg.th_n_v)
    t0 = time.perf_counter()
    try:
        phi, _, met = register(_two_hole_problem(setup, cfg, method, param, space, y), a0)
    except InfeasibleError as exc:
        # a reduced space may be unable to meet the misfit bound at all
        log.warning("two-holes %s %g: %s", method, param, exc)
        return _infeasible_row(method, param, space or setup.space, t0), None
    row = _split_metrics(setup, mu, phi, met, y_test, dict(method=method, param=float(param)))
    row["infeasible"] = False
    reps = _boundary_bound_rows(setup, mu, phi, cfg.th_n_v)
    row["bound_holds"] = bool(all(r.holds for r in reps))
    row["bound_margin"] = float(min(r.rhs - r.lhs for r in reps))
    return row, phi.a


def _solve_unsorted(args):
    setup, cfg, param, mu, reg_space, cpd_space, seed, method = args
    x, y, y_test = gen_two_holes(mu, cfg.th_n_v)
    y_raw = unsorted_subset(y, np.random.default_rng(seed), cfg.th_fraction)
    t0 = time.perf_counter()
    res = cpd_run(setup.x_ref, y_raw, CpdConfig(w=0.0, beta=1.0, lam=1.0), space=cpd_space)
    cpd_time = time.perf_counter() - t0
    cpd_geo = geo_error(res.Y_aligned, setup.x_ref, y_test)
    phi, _, met = register(_two_hole_problem(setup, cfg, method, param, reg_space, res.Y_aligned))
    row = _split_metrics(setup, mu, phi, met, y_test, dict(method=method, param=float(param)))
    row.update(cpd_geo_error=cpd_geo, cpd_iterations=res.iterations, cpd_wall_time_s=cpd_time,
               cpd_exit=res.exit_reason)
    return row, phi.a


def _map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


def _param_grid(cfg, method):
    return {"tykhonov": cfg.th_xi, "morozov": cfg.th_delta, "inverted": cfg.th_xi_inverted}[method]


def run_two_holes(cfg: ExperimentConfig | None = None, tables=("train", "test", "unsorted", "sorted_unsorted")):
    """Two-hole reduction study. Returns {table name: (per-run rows, summary rows)}.

    - train: every method/parameter on the sorted training set (full space)
    - test: full vs POD-reduced registration on the sorted test set
      (xi = min xi, delta = min delta; POD built from that method's training snapshots)
    - unsorted: CPD then registration on unsorted 80% subsets, full vs reduced
    - sorted_unsorted: basis from sorted training (largest xi), unsorted test targets,
      full-space CPD vs reduced-space CPD, each followed by reduced Tykhonov
    """
    cfg = cfg or ExperimentConfig()
    setup = two_hole_setup(cfg)
    out = {}
    snapshots = {}  # (method, param) -> coefficient rows over the training set

    need_train = set()
    if "train" in tables:
        need_train |= {(m, p) for m in cfg.th_methods for p in _param_grid(cfg, m)}
    if "test" in tables:
        need_train |= {(m, _test_param(cfg, m)) for m in cfg.th_methods}
    if "sorted_unsorted" in tables:
        need_train.add(("tykhonov", max(cfg.th_xi)))
    train_rows = []
    for method, param in sorted(need_train, key=lambda k: (k[0], -k[1])):
        tasks = [(setup, cfg, method, param, mu, None, None) for mu in setup.train]
        res = _map(_solve_sorted, tasks, cfg.jobs)
        for i, (row, a) in enumerate(res):
            row.update(split="train", index=i)
            train_rows.append(row)
        snapshots[(method, param)] = np.array([a for _, a in res if a is not None])
        log.info("two-holes train %s %.0e done", method, param)
    if "train" in tables:
        summ = [summarize([r for r in train_rows if (r["method"], r["param"]) == (m, p)], f"{m} {p:g}")
                for m in cfg.th_methods for p in _param_grid(cfg, m)]
        out["train"] = (train_rows, summ)

    if "test" in tables:
        rows, summ = [], []
        for method in cfg.th_methods:
            param = _test_param(cfg, method)
            basis = pod_build(snapshots[(method, param)], cfg.th_tol_pod, setup.space)
            red = reduce_space(setup.space, basis)
            for label, space in (("full", setup.space), ("reduced", red)):
                tasks = [(setup, cfg, method, param, mu, space, None) for mu in setup.test]
                rr = [r for r, _ in _map(_solve_sorted, tasks, cfg.jobs)]
                for i, r in enumerate(rr):
                    r.update(split="test", space=label, M=space.M, index=i)
                rows += rr
                summ.append(summarize(rr, f"{method} {label} (M={space.M})"))
        out["test"] = (rows, summ)

    if "unsorted" in tables:
        param = max(cfg.th_xi)
        rows, summ = [], []
        tasks = [(setup, cfg, param, mu, None, None, cfg.seed + 1000 + i, "tykhonov")
                 for i, mu in enumerate(setup.train)]
        res = _map(_solve_unsorted, tasks, cfg.jobs)
        basis = pod_build(np.array([a for _, a in res]), cfg.th_tol_pod, setup.space)
        red = reduce_space(setup.space, basis)
        for label, space in (("full", setup.space), ("reduced", red)):
            tasks = [(setup, cfg, param, mu, space, None, cfg.seed + 2000 + i, "tykhonov")
                     for i, mu in enumerate(setup.test)]
            rr = [r for r, _ in _map(_solve_unsorted, tasks, cfg.jobs)]
            for i, r in enumerate(rr):
                r.update(split="test", space=label, M=space.M, index=i)
            rows += rr
            summ.append(summarize(rr, f"tykhonov {label} (M={space.M})"))
            if label == "full":
                summ.insert(0, summarize([dict(q_min=np.nan, geo_error=r["cpd_geo_error"],
                                               iterations=r["cpd_iterations"],
                                               wall_time_s=r["cpd_wall_time_s"]) for r in rr], "cpd"))
        out["unsorted"] = (rows, summ)

    if "sorted_unsorted" in tables:
        param = max(cfg.th_xi)
        basis = pod_build(snapshots[("tykhonov", param)], cfg.th_tol_pod, setup.space)
        red = reduce_space(setup.space, basis)
        rows, summ = [], []
        for label, cpd_space in (("full_cpd", None), ("reduced_cpd", red)):
            tasks = [(setup, cfg, param, mu, red, cpd_space, cfg.seed + 3000 + i, "tykhonov")
                     for i, mu in enumerate(setup.test)]
            rr = [r for r, _ in _map(_solve_unsorted, tasks, cfg.jobs)]
            for i, r in enumerate(rr):
                r.update(split="test", cpd=label, M=red.M, index=i)
            rows += rr
            summ.append(summarize([dict(q_min=np.nan, geo_error=r["cpd_geo_error"],
                                        iterations=r["cpd_iterations"],
                                        wall_time_s=r["cpd_wall_time_s"]) for r in rr], f"{label}: cpd"))
            summ.append(summarize(rr, f"{label}: tykhonov reduced (M={red.M})"))
        out["sorted_unsorted"] = (rows, summ)
    return out


def _test_param(cfg, method):
    return min(_param_grid(cfg, method))


# -- table runner ----------------------------------------------------------------------

EXPERIMENTS = ("three-point", "ring-twist", "two-holes")


def run_table(experiment: str, cfg: ExperimentConfig | None = None, out_dir=None, **kw):
    """Run one experiment and (optionally) write its CSV files to out_dir.

    Returns {file stem: rows}.
    """
    cfg = cfg or ExperimentConfig()
    if experiment == "three-point":
        tables = {"three_point": run_three_point(cfg, **kw)}
        if kw.get("kinds") is None:
            tables["potential_vs_full"] = run_potential_vs_full(cfg)
    elif experiment == "ring-twist":
        tables = {"ring_twist": run_ring_twist(cfg, **kw)}
    elif experiment == "two-holes":
        res = run_two_holes(cfg, **kw)
        tables = {}
        for name, (rows, summ) in res.items():
            tables[f"two_holes_{name}_runs"] = rows
            tables[f"two_holes_{name}"] = summ
    else:
        raise ConfigurationError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")
    if out_dir is not None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for stem, rows in tables.items():
            write_csv(rows, out / f"{stem}.csv")
    return tables


__all__ = [
    "ExperimentConfig", "TwoHoleParams", "gen_three_point", "gen_ring_twist", "gen_two_holes",
    "ring_mesh", "run_three_point", "run_potential_vs_full", "run_ring_twist", "run_two_holes",
    "run_table", "write_csv", "summarize", "is_simple_closed", "unsorted_subset",
]

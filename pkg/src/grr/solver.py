"""Smooth optimizers used by the registration statements.

- ``minimize_qn``: limited-memory BFGS with backtracking Armijo search
- ``minimize_linconstr``: log-barrier method for |A a - r| <= delta
- ``minimize_nlconstr``: augmented Lagrangian for a single g(a) <= bound
- ``continuation``: warm-started sweeps over a parameter schedule
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from .errors import ConfigurationError, InfeasibleError, NumericalError

log = logging.getLogger(__name__)


@dataclass
class BarrierConfig:
    mu0: float = 1.0
    shrink: float = 0.2
    rounds: int = 12
    final_tol: float = 1e-8
    # interior target of the feasibility phase, as a fraction of delta
    interior: float = 0.5


@dataclass
class AugLagConfig:
    multiplier0: float = 0.0
    penalty0: float = 10.0
    growth: float = 10.0
    constraint_tol: float = 1e-6
    outer_iters: int = 30


@dataclass
class SolverConfig:
    max_iters: int = 500
    grad_tol: float = 1e-6
    step_tol: float = 1e-14
    decrease_tol: float = 1e-13
    memory: int = 20
    c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60
    barrier: BarrierConfig = field(default_factory=BarrierConfig)
    auglag: AugLagConfig = field(default_factory=AugLagConfig)

    def __post_init__(self):
        if self.grad_tol <= 0 or self.step_tol <= 0 or self.decrease_tol <= 0:
            raise ConfigurationError("solver tolerances must be positive")
        if not 0 < self.barrier.shrink < 1:
            raise ConfigurationError("barrier shrink factor must lie in (0, 1)")
        if self.max_iters < 1 or self.memory < 1:
            raise ConfigurationError("max_iters and memory must be positive")


@dataclass
class SolveReport:
    iterations: int = 0
    final_value: float = np.nan
    grad_norm: float = np.nan
    constraint_violation: float = 0.0
    wall_time_s: float = 0.0
    converged: bool = False
    message: str = ""
    history: list = field(default_factory=list, repr=False)

    def as_row(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_value": self.final_value,
            "grad_norm": self.grad_norm,
            "constraint_violation": self.constraint_violation,
            "wall_time_s": self.wall_time_s,
            "converged": self.converged,
            "message": self.message,
        }


def minimize_qn(fun, a0, config: SolverConfig | None = None, step_bound=None,
                grad_tol: float | None = None, max_iters: int | None = None, precond=None):
    """Limited-memory BFGS with a backtracking Armijo line search.

    Parameters
    ----------
    fun : callable a -> (value, gradient)
    a0 : ndarray
    step_bound : optional callable (a, p) -> largest alpha keeping a + alpha p
        admissible (used by barrier methods to stay strictly interior).
    precond : optional callable (a, v, memory) -> H0 v, an SPD initial inverse
        Hessian replacing the scalar scaling of the two-loop recursion.

    Converged when |g| <= grad_tol * max(1, |g0|) or when the predicted
    decrease -g.p of the quasi-Newton step drops below
    decrease_tol * max(1, |f|).
    """
    cfg = config or SolverConfig()
    gtol = cfg.grad_tol if grad_tol is None else grad_tol
    maxit = cfg.max_iters if max_iters is None else max_iters
    t0 = time.perf_counter()
    a = np.array(a0, dtype=float)
    f, g = fun(a)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericalError("objective is not finite at the starting point")
    g0n = np.linalg.norm(g)
    target = gtol * max(1.0, g0n)
    mem = deque(maxlen=cfg.memory)
    rep = SolveReport(final_value=f, grad_norm=g0n)
    rep.history.append(f)
    it = 0
    while True:
        gn = np.linalg.norm(g)
        if gn <= target:
            rep.converged, rep.message = True, "gradient tolerance reached"
            break
        if it >= maxit:
            rep.message = "iteration limit reached"
            break
        h0 = None if precond is None else (lambda v, a=a: precond(a, v, mem))
        p = _two_loop(g, mem, h0)
        slope = g @ p
        if not slope < 0:
            mem.clear()
            p = -g
            slope = -gn * gn
        if -slope <= cfg.decrease_tol * max(1.0, abs(f)):
            # predicted decrease is at the rounding level of f
            rep.converged, rep.message = True, "predicted decrease below tolerance"
            break
        alpha = 1.0
        if not mem and precond is None:
            alpha = min(1.0, 1.0 / gn)
        if step_bound is not None:
            amax = step_bound(a, p)
            alpha = min(alpha, 0.99 * amax)
        accepted = False
        for _ in range(cfg.max_backtracks):
            a_new = a + alpha * p
            f_new, g_new = fun(a_new)
            # clamped or overflowing values act as ascent barriers
            if (np.isfinite(f_new) and f_new <= f + cfg.c1 * alpha * slope
                    and np.all(np.isfinite(g_new))):
                accepted = True
                break
            alpha *= cfg.backtrack
        if not accepted:
            if mem:
                mem.clear()  # retry once along steepest descent
                continue
            rep.message = "line search failed"
            break
        s = a_new - a
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            mem.append((s, y, 1.0 / sy))
        step = np.linalg.norm(s)
        a, f, g = a_new, f_new, g_new
        it += 1
        rep.history.append(f)
        if step <= cfg.step_tol * (1.0 + np.linalg.norm(a)):
            rep.message = "step tolerance reached"
            rep.converged = np.linalg.norm(g) <= target
            break
    rep.iterations = it
    rep.final_value = float(f)
    rep.grad_norm = float(np.linalg.norm(g))
    rep.wall_time_s = time.perf_counter() - t0
    return a, rep


def _two_loop(g, mem, h0=None):
    q = -g.copy()
    if not mem:
        return q if h0 is None else h0(q)
    alphas = []
    for s, y, rho in reversed(mem):
        al = rho * (s @ q)
        alphas.append(al)
        q -= al * y
    if h0 is None:
        s, y, rho = mem[-1]
        q *= (s @ y) / (y @ y)
    else:
        q = h0(q)
    for (s, y, rho), al in zip(mem, reversed(alphas)):
        be = rho * (y @ q)
        q += (al - be) * s
    return q


# -- linear inequality constraints -------------------------------------------------


class _ScaledBox:
    """Coordinates y = (u, c) with a = a_c + V diag(1/sv) u + Z c.

    (V, sv) come from the SVD of the row-normalized matrix A / delta, so the
    normalized residual is rho = (A a - r) / delta = U u + e with e the
    least-squares misfit. The constraints read |rho_i| <= 1. Dependent rows
    (rank-deficient A) are handled without special cases.
    """

    def __init__(self, A, rhs, delta):
        An = A / delta[:, None]
        rn = rhs / delta
        m, n = A.shape
        U, sv, Vt = scipy.linalg.svd(An, full_matrices=True)
        tol = sv[0] * max(m, n) * np.finfo(float).eps * 10 if len(sv) else 0.0
        r = int(np.sum(sv > tol))
        self.rank, self.m = r, m
        self.U = U[:, :r]
        self.P = Vt[:r].T / sv[:r]
        self.Z = Vt[r:].T
        self.sv = sv[:r]
        self.a_c = self.P @ (self.U.T @ rn)
        self.e = An @ self.a_c - rn

    def to_a(self, y):
        return self.a_c + self.P @ y[: self.rank] + self.Z @ y[self.rank:]

    def from_a(self, a):
        d = a - self.a_c
        return np.concatenate([self.sv * (self.P.T @ d) * self.sv, self.Z.T @ d])

    def rho(self, y):
        return self.U @ y[: self.rank] + self.e

    def pull(self, g):
        with np.errstate(over="ignore", invalid="ignore"):
            return np.concatenate([self.P.T @ g, self.Z.T @ g])


def _box_step_bound(tr: _ScaledBox):
    r = tr.rank

    def bound(y, p):
        rho = tr.rho(y)
        dr = tr.U @ p[:r]
        with np.errstate(divide="ignore", invalid="ignore"):
            up = np.where(dr > 0, (1.0 - rho) / dr, np.inf)
            lo = np.where(dr < 0, (-1.0 - rho) / dr, np.inf)
        return float(min(up.min(initial=np.inf), lo.min(initial=np.inf)))
    return bound


def minimize_linconstr(fun, a0, A, rhs, delta, config: SolverConfig | None = None):
    """Minimize f(a) subject to |A a - rhs| <= delta componentwise.

    A strictly interior start is obtained (if a0 is not interior) by a
    quadratic-penalty homotopy on the normalized residual, falling back to a
    linear program for the most interior point; a log-barrier outer loop with
    warm-started quasi-Newton inner solves follows.

    Raises InfeasibleError when no strictly interior point exists.
    """
    cfg = config or SolverConfig()
    bc = cfg.barrier
    t0 = time.perf_counter()
    A = np.atleast_2d(np.asarray(A, dtype=float))
    rhs = np.asarray(rhs, dtype=float)
    delta = np.broadcast_to(np.asarray(delta, dtype=float), rhs.shape).copy()
    if np.any(delta <= 0):
        raise ConfigurationError("constraint tolerances must be positive")
    a0 = np.asarray(a0, dtype=float)

    tr = _ScaledBox(A, rhs, delta)

    def fy(y):
        f, g = fun(tr.to_a(y))
        return f, tr.pull(g)

    total_its = 0
    history = []
    y = tr.from_a(a0)
    if np.max(np.abs(tr.rho(y)), initial=0.0) >= 1.0:
        y, its = _feasible_start(fy, y, tr, bc.interior, cfg)
        total_its += its

    bound = _box_step_bound(tr)
    mu = bc.mu0
    rep = SolveReport()
    for k in range(bc.rounds):
        last = k == bc.rounds - 1
        barrier = _BoxBarrier(fy, tr, mu)
        y, r = minimize_qn(barrier, y, cfg, step_bound=bound,
                           grad_tol=bc.final_tol if last else cfg.grad_tol, precond=barrier.precond)
        total_its += r.iterations
        history.extend(r.history)
        log.debug("barrier round %d: mu=%.3e its=%d |g|=%.3e f=%.6e %s", k, mu, r.iterations,
                  r.grad_norm, r.final_value, r.message)
        rep = r
        mu *= bc.shrink
    a = tr.to_a(y)
    f, g = fun(a)
    viol = np.abs(A @ a - rhs) - delta
    rep = SolveReport(
        iterations=total_its,
        final_value=float(f),
        grad_norm=rep.grad_norm,
        constraint_violation=float(max(viol.max(initial=-np.inf), 0.0)),
        wall_time_s=time.perf_counter() - t0,
        converged=rep.converged and viol.max(initial=-1.0) <= 0,
        message=rep.message,
        history=history,
    )
    return a, rep


class _BoxBarrier:
    """f(y) - mu sum log(1 - rho_i^2) with a block preconditioner.

    The residual block uses the exact barrier Hessian U^T D U plus the pulled
    back identity scaled by the latest curvature estimate h of f; the
    null-space block uses 1 / h.
    """

    def __init__(self, fy, tr: _ScaledBox, mu):
        self.fy, self.tr, self.mu = fy, tr, mu
        self.inv_sv2 = 1.0 / tr.sv**2

    def __call__(self, y):
        f, g = self.fy(y)
        r = self.tr.rank
        rho = self.tr.rho(y)
        lo, up = 1.0 + rho, 1.0 - rho
        if np.any(lo <= 0) or np.any(up <= 0):
            return np.inf, g
        val = f - self.mu * (np.log(lo).sum() + np.log(up).sum())
        gb = g.copy()
        gb[:r] += self.mu * (self.tr.U.T @ (1.0 / up - 1.0 / lo))
        return val, gb

    def precond(self, y, v, mem):
        tr, r = self.tr, self.tr.rank
        h = _curvature(mem, r)
        out = v / h
        if r:
            rho = np.clip(tr.rho(y), -1 + 1e-15, 1 - 1e-15)
            D = self.mu * (1.0 / (1.0 - rho) ** 2 + 1.0 / (1.0 + rho) ** 2)
            K = (tr.U.T * D) @ tr.U
            K[np.diag_indices(r)] += h * self.inv_sv2
            try:
                out[:r] = scipy.linalg.cho_solve(scipy.linalg.cho_factor(K, check_finite=False), v[:r],
                                                 check_finite=False)
            except np.linalg.LinAlgError:
                out[:r] = v[:r] / np.diag(K)
        return out


def _feasible_start(fy, y, tr: _ScaledBox, interior, cfg: SolverConfig):
    if np.max(np.abs(tr.e), initial=0.0) < interior:
        try:
            return _penalty_homotopy(fy, y, tr, interior, cfg)
        except InfeasibleError:
            log.debug("penalty homotopy stalled; trying the most interior point")
    a_lp, slack = _chebyshev_interior(tr)
    if slack <= 0:
        raise InfeasibleError(f"constraint set has no interior point (best normalized slack {slack:.3e})")
    # keep the warm start's null-space part, take the interior residual part
    y_lp = tr.from_a(a_lp)
    y_new = y.copy()
    y_new[: tr.rank] = y_lp[: tr.rank]
    return y_new, 0


def _penalty_homotopy(fy, y, tr: _ScaledBox, interior, cfg: SolverConfig):
    """Minimize f + w/2 |rho|^2 for growing w until max|rho| <= interior."""
    r = tr.rank
    f0, _ = fy(y)
    rho = tr.rho(y)
    w = max(abs(f0), 1e-3) / max(float(rho @ rho), 1e-300)
    its = 0
    for _ in range(40):
        def F(v, w=w):
            f, g = fy(v)
            rv = tr.rho(v)
            g = g.copy()
            g[:r] += w * (tr.U.T @ rv)
            return f + 0.5 * w * (rv @ rv), g
        y, res = minimize_qn(F, y, cfg, precond=_penalty_precond(tr, w))
        its += res.iterations
        smax = np.max(np.abs(tr.rho(y)))
        log.debug("feasibility phase: w=%.3e max|rho|=%.3e its=%d", w, smax, res.iterations)
        if smax <= interior:
            return y, its
        w *= 10.0
    raise InfeasibleError("feasibility phase failed to reach the interior of the constraint set")


def _curvature(mem, r):
    """Curvature estimate of f from the null-space block of the latest pair."""
    if not mem:
        return 1.0
    s, yv, _ = mem[-1]
    sc, yc = (s[r:], yv[r:]) if len(s) > r else (s, yv)
    ss = sc @ sc
    return max(float(sc @ yc) / ss, 1e-8) if ss > 0 else 1.0


def _penalty_precond(tr: _ScaledBox, w):
    r = tr.rank
    inv_sv2 = 1.0 / tr.sv**2

    def H0(y, v, mem):
        h = _curvature(mem, r)
        out = v / h
        out[:r] = v[:r] / (w + h * inv_sv2)
        return out
    return H0


def _chebyshev_interior(tr: _ScaledBox):
    """Point maximizing the smallest normalized slack min_i (1 - |rho_i|), in a-coordinates."""
    m, r = tr.m, tr.rank
    # variables (u, t): maximize t s.t. U u + e + t <= 1 and -(U u + e) + t <= 1
    c = np.zeros(r + 1)
    c[-1] = -1.0
    ones = np.ones((m, 1))
    A_ub = np.vstack([np.hstack([tr.U, ones]), np.hstack([-tr.U, ones])])
    b_ub = np.concatenate([1.0 - tr.e, 1.0 + tr.e])
    bounds = [(None, None)] * r + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise InfeasibleError(f"interior-point search failed: {res.message}")
    return tr.a_c + tr.P @ res.x[:r], float(res.x[-1])


# -- single nonlinear inequality -----------------------------------------------------


def minimize_nlconstr(fun, a0, con, bound, config: SolverConfig | None = None, precond=None):
    """Minimize f(a) subject to g(a) <= bound by an augmented Lagrangian (PHR).

    ``con`` returns (g, grad g). The report's constraint_violation is
    max(0, g - bound) at the returned point.
    """
    cfg = config or SolverConfig()
    al = cfg.auglag
    t0 = time.perf_counter()
    a = np.asarray(a0, dtype=float).copy()
    lam = al.multiplier0
    rho = al.penalty0
    total = 0
    prev_viol = np.inf
    viols = []
    rep = SolveReport()
    ok = False
    for outer in range(al.outer_iters):
        def L(v, lam=lam, rho=rho):
            f, gf = fun(v)
            c, gc = con(v)
            c = c - bound
            t = max(0.0, lam + rho * c)
            val = f + (t * t - lam * lam) / (2 * rho)
            return val, gf + t * gc
        a, r = minimize_qn(L, a, cfg, precond=precond)
        total += r.iterations
        c = con(a)[0] - bound
        viol = max(0.0, c)
        viols.append(viol)
        lam = max(0.0, lam + rho * c)
        log.debug("auglag outer %d: viol=%.3e lam=%.3e rho=%.1e", outer, viol, lam, rho)
        if viol <= al.constraint_tol and r.converged and abs(lam * c) <= max(al.constraint_tol, 1e-8):
            ok = True
            rep = r
            break
        if viol > 0.25 * prev_viol:
            rho *= al.growth
        prev_viol = viol
        rep = r
    f, _ = fun(a)
    c = con(a)[0] - bound
    out = SolveReport(
        iterations=total,
        final_value=float(f),
        grad_norm=rep.grad_norm,
        constraint_violation=float(max(0.0, c)),
        wall_time_s=time.perf_counter() - t0,
        converged=ok,
        message="converged" if ok else f"multiplier loop stalled; violations {viols[-3:]}",
        history=viols,
    )
    return a, out


def continuation(run, schedule, a0=None):
    """Solve a sequence of problems, warm-starting each from the previous solution.

    ``run(t, a_start)`` returns (a, report). The first solve starts from
    ``a0`` (zero coefficients, i.e. the identity map, when None is given and
    ``run`` accepts None).
    """
    out = []
    a = a0
    for t in schedule:
        a, rep = run(t, a)
        out.append((a, rep))
    return out

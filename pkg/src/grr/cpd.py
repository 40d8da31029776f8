"""Coherent point drift (non-rigid) with full kernel and reduced-space variants."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .errors import ConfigurationError, DomainError, NumericalError
from .mapspace import MapSpace

log = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-12
PRUNE_TOL = 1e-12


@dataclass
class CpdConfig:
    w: float = 0.0
    beta: float = 1.0
    lam: float = 1.0
    max_em_iters: int = 300
    tol_coef: float = 1e-4
    tol_cover: float = 1e-5
    solver: str = "direct"  # or "eig" (eigendecomposition + Woodbury)

    def __post_init__(self):
        if not 0 <= self.w < 1:
            raise ConfigurationError("outlier weight w must lie in [0, 1)")
        if self.beta <= 0 or self.lam <= 0:
            raise ConfigurationError("beta and lambda must be positive")
        if self.solver not in ("direct", "eig"):
            raise ConfigurationError(f"unknown CPD linear solver {self.solver!r}")


@dataclass
class CpdState:
    W: np.ndarray
    sigma2: float
    P: np.ndarray | None = None
    iterations: int = 0


@dataclass
class CpdResult:
    Y_aligned: np.ndarray
    state: CpdState
    converged: bool
    exit_reason: str
    cover_distance: float
    coef_change: float
    energy: list = field(default_factory=list, repr=False)

    @property
    def iterations(self):
        return self.state.iterations


def _check(X, Y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if len(X) == 0 or len(Y) == 0:
        raise DomainError("CPD needs nonempty reference and target clouds")
    if X.shape[1] != Y.shape[1]:
        raise DomainError("reference and target clouds differ in dimension")
    return X, Y


def _sqdist(A, B):
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2 * A @ B.T
    return np.maximum(d, 0.0)


def gaussian_gram(X, Z, beta):
    return np.exp(-_sqdist(X, Z) / (2 * beta**2))


def cpd_init(X, Y_raw) -> float:
    """Initial variance: sum of all squared pair distances over d Q N."""
    X, Y = _check(X, Y_raw)
    N, d = X.shape
    Q = len(Y)
    return float(_sqdist(Y, X).sum() / (d * Q * N))


def e_step(mu, Y_raw, sigma2, w=0.0) -> np.ndarray:
    """Posterior responsibilities P (Q x N) of centroids ``mu`` for targets ``Y_raw``."""
    if sigma2 <= 0:
        raise DomainError("sigma2 must be positive")
    mu, Y = _check(mu, Y_raw)
    N, d = mu.shape
    Q = len(Y)
    L = -_sqdist(Y, mu) / (2 * sigma2)
    if w > 0:
        logc = np.log(w / (1 - w)) + np.log(N / Q) + 0.5 * d * np.log(2 * np.pi * sigma2)
        Lc = np.hstack([L, np.full((Q, 1), logc)])
        lse = logsumexp(Lc, axis=1)
    else:
        lse = logsumexp(L, axis=1)
    return np.exp(L - lse[:, None])


def _solve_spd(A, B):
    try:
        cf = scipy.linalg.cho_factor(A, check_finite=False)
        return scipy.linalg.cho_solve(cf, B, check_finite=False)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(A)
        raise NumericalError(f"CPD M-step system is singular (condition number {cond:.3e})") from None


def m_step_W(X, Y_raw, P, sigma2, lam, beta, G=None, solver="direct", eig=None) -> np.ndarray:
    """Kernel coefficients W solving (G + lam sigma2 D^-1) W = D^-1 P^T Y - X.

    D holds the column sums of P (total responsibility of each centroid).
    Centroids with responsibility below 1e-12 are pruned and get W = 0.
    """
    X, Y = _check(X, Y_raw)
    if G is None:
        G = gaussian_gram(X, X, beta)
    D = P.sum(axis=0)
    keep = D >= PRUNE_TOL
    W = np.zeros_like(X)
    if not keep.any():
        return W
    PY = P.T @ Y
    rhs = PY[keep] / D[keep, None] - X[keep]
    Gk = G[np.ix_(keep, keep)]
    c = lam * sigma2
    if solver == "eig" and keep.all():
        W[keep] = _woodbury_solve(Gk, D, c, rhs, eig)
    else:
        W[keep] = _solve_spd(Gk + np.diag(c / D[keep]), rhs)
    return W


def gram_eig(G, rel_tol=1e-10):
    """Truncated eigendecomposition of a kernel Gram matrix."""
    lam, V = np.linalg.eigh(G)
    keep = lam > rel_tol * lam.max()
    return lam[keep], V[:, keep]


def _woodbury_solve(G, D, c, rhs, eig=None):
    # (c D^-1 + V L V^T)^-1 = D/c - D V (c L^-1 + V^T D V)^-1 V^T D / c
    lam, V = gram_eig(G) if eig is None else eig
    DV = D[:, None] * V
    inner = c * np.diag(1.0 / lam) + V.T @ DV
    DR = D[:, None] * rhs
    return (DR - DV @ np.linalg.solve(inner, V.T @ DR)) / c


def m_step_sigma(Y_moved, Y_raw, P) -> float:
    """Variance update from the three-trace formula, floored at 1e-12."""
    T, Y = _check(Y_moved, Y_raw)
    Np = P.sum()
    if Np <= 0:
        raise DomainError("posterior mass is zero")
    d = Y.shape[1]
    a = (P.sum(axis=1) * (Y * Y).sum(1)).sum()
    b = np.sum((P.T @ Y) * T)
    c = (P.sum(axis=0) * (T * T).sum(1)).sum()
    return float(max((a - 2 * b + c) / (Np * d), SIGMA2_FLOOR))


def cpd_energy(Y_moved, Y_raw, sigma2, w, reg) -> float:
    """Negative regularized log-likelihood (up to constants); ``reg`` is the prior term."""
    T, Y = _check(Y_moved, Y_raw)
    N, d = T.shape
    Q = len(Y)
    L = -_sqdist(Y, T) / (2 * sigma2) + np.log((1 - w) / N) - 0.5 * d * np.log(2 * np.pi * sigma2)
    if w > 0:
        L = np.hstack([L, np.full((Q, 1), np.log(w / Q))])
    return float(-logsumexp(L, axis=1).sum() + reg)


def cover_distance(Y_raw, Y_moved) -> float:
    """max over raw targets of the distance to the nearest moved reference point."""
    dist, _ = cKDTree(Y_moved).query(Y_raw)
    return float(dist.max())


def cpd_run(X, Y_raw, cfg: CpdConfig | None = None, space: MapSpace | None = None) -> CpdResult:
    """EM iterations of coherent point drift.

    With ``space`` given, the displacement is sought in span of the space's
    basis fields (H2-orthonormal), regularized by lam/2 |c|^2.
    """
    cfg = cfg or CpdConfig()
    X, Y = _check(X, Y_raw)
    N, d = X.shape
    sigma2 = cpd_init(X, Y)
    if sigma2 <= 0:
        # every point coincides: nothing to align
        return CpdResult(X.copy(), CpdState(np.zeros_like(X), SIGMA2_FLOOR, None, 0), True,
                         "coincident", 0.0, 0.0)
    energy = []
    if space is None:
        G = gaussian_gram(X, X, cfg.beta)
        eig = gram_eig(G) if cfg.solver == "eig" else None
        W = np.zeros_like(X)

        def move(W):
            return X + G @ W

        def reg(W):
            return 0.5 * cfg.lam * float(np.sum(W * (G @ W)))
    else:
        Psi = space.basis_eval(X, 0)  # (N, d, M)
        W = np.zeros(space.M)

        def move(c):
            return X + Psi @ c

        def reg(c):
            return 0.5 * cfg.lam * float(c @ c)

    T = move(W)
    converged, reason = False, "iteration limit"
    dW = np.inf
    cover = cover_distance(Y, T)
    P = None
    it = 0
    if cover < cfg.tol_cover:
        # the undeformed reference already covers the target
        return CpdResult(T, CpdState(W, sigma2, None, 0), True, "cover distance", cover, 0.0, energy)
    for it in range(1, cfg.max_em_iters + 1):
        P = e_step(T, Y, sigma2, cfg.w)
        if space is None:
            W_new = m_step_W(X, Y, P, sigma2, cfg.lam, cfg.beta, G=G, solver=cfg.solver, eig=eig)
        else:
            W_new = _reduced_m_step(X, Y, P, sigma2, cfg.lam, Psi)
        T = move(W_new)
        sigma2 = m_step_sigma(T, Y, P)
        dW = float(np.linalg.norm(W_new - W))
        W = W_new
        cover = cover_distance(Y, T)
        energy.append(cpd_energy(T, Y, sigma2, cfg.w, reg(W)))
        if dW < cfg.tol_coef:
            converged, reason = True, "coefficient change"
            break
        if cover < cfg.tol_cover:
            converged, reason = True, "cover distance"
            break
    log.debug("cpd: %d iterations, exit=%s, cover=%.3e", it, reason, cover)
    return CpdResult(T, CpdState(W, sigma2, P, it), converged, reason, cover, dW, energy)


def _reduced_m_step(X, Y, P, sigma2, lam, Psi):
    A, b = reduced_system(X, Y, P, sigma2, lam, Psi)
    return _solve_spd((A + A.T) / 2, b)


def reduced_system(X, Y, P, sigma2, lam, Psi):
    """Reduced M-step system A c = b.

    A = lam sigma2 I + sum_j d_j Psi_j^T Psi_j, b = sum_j Psi_j^T (P^T Y - D X)_j.
    """
    D = P.sum(axis=0)
    M = Psi.shape[2]
    A = lam * sigma2 * np.eye(M) + np.einsum("j,jkm,jkn->mn", D, Psi, Psi)
    b = np.einsum("jkm,jk->m", Psi, P.T @ Y - D[:, None] * X)
    return A, b

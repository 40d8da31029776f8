"""Sample-based set distances and computable geometric error bounds.

All distances are computed from finite samples; the sampling error is of the
order of the sample spacing (or of the curve's sagitta when segment
projection is enabled).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError


@dataclass
class SampledBoundary:
    """Ordered samples of a closed curve (d = 2) or surface point samples (d = 3).

    ``measure`` overrides the perimeter/area estimate (needed for surfaces).
    """

    points: np.ndarray
    closed: bool = True
    measure: float | None = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if len(pts) < 3:
            raise DomainError("a sampled boundary needs at least 3 points")
        self.points = pts

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def segments(self):
        a = self.points
        b = np.roll(a, -1, axis=0) if self.closed else a[1:]
        return (a if self.closed else a[:-1]), b

    def length(self) -> float:
        if self.measure is not None:
            return float(self.measure)
        if self.dim != 2:
            raise DomainError("surface measure must be supplied for 3-D samples")
        a, b = self.segments()
        return float(np.linalg.norm(b - a, axis=1).sum())

    @classmethod
    def from_curve(cls, fn, n=10_000):
        """Sample a closed curve t in [0, 2 pi) -> R^2 at n equispaced parameters."""
        t = 2 * np.pi * np.arange(n) / n
        return cls(np.asarray(fn(t), dtype=float))


def _segment_distance(p, a, b):
    """Distances from points p (n, d) to segments a->b (n, k, d) given per point."""
    ab = b - a
    ap = p[:, None, :] - a
    denom = np.einsum("nkd,nkd->nk", ab, ab)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(denom > 0, np.einsum("nkd,nkd->nk", ap, ab) / denom, 0.0)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.linalg.norm(p[:, None, :] - proj, axis=2)


def _as_samples(S):
    return S.points if isinstance(S, SampledBoundary) else np.atleast_2d(np.asarray(S, dtype=float))


def distances_to(points, S, refine: bool = True, k: int = 4) -> np.ndarray:
    """Distance from each point to the sample set S.

    With ``refine`` and S an ordered closed curve, distances are to the
    polyline through the samples (segments adjacent to the k nearest samples).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    samples = _as_samples(S)
    tree = cKDTree(samples)
    k = min(k, len(samples))
    dist, idx = tree.query(pts, k=k)
    dist = np.atleast_2d(dist.T).T if k > 1 else dist[:, None]
    idx = np.atleast_2d(idx.T).T if k > 1 else idx[:, None]
    best = dist.min(axis=1)
    if not refine or not isinstance(S, SampledBoundary) or S.dim != 2:
        return best
    n = len(samples)
    if S.closed:
        nxt, prv = (idx + 1) % n, (idx - 1) % n
    else:
        nxt, prv = np.minimum(idx + 1, n - 1), np.maximum(idx - 1, 0)
    a = np.concatenate([samples[idx], samples[prv]], axis=1)
    b = np.concatenate([samples[nxt], samples[idx]], axis=1)
    seg = _segment_distance(pts, a, b).min(axis=1)
    return np.minimum(best, seg)


def dist_point_set(x, S, refine: bool = False) -> float:
    """inf over the set S of |x - y|."""
    return float(distances_to(np.atleast_2d(x), S, refine)[0])


def directed_distance(U, V, refine: bool = False) -> float:
    """sup over samples of U of the distance to V."""
    return float(distances_to(_as_samples(U), V, refine).max())


def hausdorff(U, V, refine: bool = False) -> float:
    """Symmetric Hausdorff distance between two sample sets."""
    return max(directed_distance(U, V, refine), directed_distance(V, U, refine))


def dist_bnd(U_boundary, V_boundary, refine: bool = True) -> float:
    """Non-symmetric boundary distance sup_{x in dU} dist(x, dV)."""
    return directed_distance(U_boundary, V_boundary, refine)


def epsilon_cover(points, boundary) -> float:
    """sup over boundary samples of the distance to the finite point set."""
    return directed_distance(boundary, np.atleast_2d(np.asarray(points, dtype=float)), refine=False)


def geo_error(phi, x_pts, test_pts) -> float:
    """max_i min_j |Phi(x_i) - y_test_j|."""
    mapped = phi(np.atleast_2d(x_pts)) if callable(phi) else np.atleast_2d(phi)
    d, _ = cKDTree(np.atleast_2d(test_pts)).query(mapped)
    return float(d.max())


@dataclass
class TubeArea:
    estimate: float
    stderr: float
    bound: float


def tube_area(boundary: SampledBoundary, delta: float, n_mc: int = 1_000_000, seed: int = 0,
              batch: int = 200_000) -> TubeArea:
    """Monte Carlo measure of the delta-neighbourhood of a boundary, and its bound.

    The bound is 2 delta |dU| in 2-D and 2 delta |dU| + 8 pi^2 delta^3 / 3 in 3-D.
    """
    if delta < 0:
        raise DomainError("delta must be non-negative")
    d = boundary.dim
    measure = boundary.length()
    bound = 2 * delta * measure + (8 * math.pi**2 * delta**3 / 3 if d == 3 else 0.0)
    if delta == 0:
        return TubeArea(0.0, 0.0, bound)
    lo = boundary.points.min(axis=0) - delta
    hi = boundary.points.max(axis=0) + delta
    vol = float(np.prod(hi - lo))
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < n_mc:
        m = min(batch, n_mc - done)
        pts = lo + rng.random((m, d)) * (hi - lo)
        hits += int(np.count_nonzero(distances_to(pts, boundary, refine=True) < delta))
        done += m
    p = hits / n_mc
    return TubeArea(vol * p, vol * math.sqrt(p * (1 - p) / n_mc), bound)


# -- Lipschitz corner constant -----------------------------------------------------------


def _corner_branches(alpha, t):
    s, c = math.sin(alpha), math.cos(alpha)
    b1 = np.sqrt((1 / s - t) ** 2 + (math.tan(alpha) * t) ** 2)
    b2 = t / c
    b3 = 1 + 2 * s * t
    return np.minimum(np.minimum(b1, b2), b3)


def corner_constant(alpha: float, grid: int | None = None) -> float:
    """C(alpha) = max over t in [0, 1/sin a - sin a] of min(b1, b2, b3).

    b1 = sqrt((1/sin a - t)^2 + (tan a t)^2), b2 = t / cos a, b3 = 1 + 2 sin a t.
    By default the maximum is located exactly: b1 is convex and b2, b3 are
    increasing, so it sits at an interval end or at a branch crossing. With
    ``grid`` set, a plain grid maximum over that many points is returned instead.
    At alpha = pi/2 the interval collapses and the limit cot(alpha) -> 0 is returned.
    """
    if not 0 < alpha <= math.pi / 2 + 1e-15:
        raise DomainError("alpha must lie in (0, pi/2]")
    s, c = math.sin(alpha), math.cos(alpha)
    T = 1 / s - s
    if T <= 1e-15 or c <= 1e-15:
        return 0.0
    if grid is not None:
        t = np.linspace(0.0, T, grid)
        return float(_corner_branches(alpha, t).max())
    cands = [0.0, T, 1 / (2 * s)]
    if 1 / c > 2 * s:
        cands.append(1 / (1 / c - 2 * s))
    # b1 = b3: t^2 (1 + tan^2 - 4 s^2) - t (2/s + 4 s) + (1/s^2 - 1) = 0
    qa = 1 + math.tan(alpha) ** 2 - 4 * s * s
    qb = -(2 / s + 4 * s)
    qc = 1 / s**2 - 1
    if abs(qa) > 1e-14:
        disc = qb * qb - 4 * qa * qc
        if disc >= 0:
            r = math.sqrt(disc)
            cands += [(-qb - r) / (2 * qa), (-qb + r) / (2 * qa)]
    elif abs(qb) > 0:
        cands.append(-qc / qb)
    t = np.array([x for x in cands if 0 <= x <= T])
    return float(_corner_branches(alpha, t).max())


# -- quasi-Hausdorff bound ----------------------------------------------------------------


@dataclass
class BoundaryBoundReport:
    lhs: float  # dist_bnd(Phi(dOmega); dV)
    max_misfit: float  # max_i |Phi(x_i) - y_i|
    K: float
    eps: float
    rhs: float
    holds: bool


def verify_boundary_bound(phi, omega_boundary: SampledBoundary, v_boundary: SampledBoundary, x_pts, y_pts,
                  K: float | None = None, slack: float = 1e-3) -> BoundaryBoundReport:
    """Check dist_bnd(Phi(dOmega); dV) <= max_i |Phi(x_i) - y_i| + K eps.

    eps is the cover radius of {x_i} on dOmega, K the largest sampled spectral
    norm of grad Phi on dOmega (or the supplied value).
    """
    from .mapspace import map_eval

    x = np.atleast_2d(x_pts)
    y = np.atleast_2d(y_pts)
    mapped_bnd = SampledBoundary(phi(omega_boundary.points), omega_boundary.closed)
    lhs = dist_bnd(mapped_bnd, v_boundary, refine=True)
    misfit = float(np.linalg.norm(phi(x) - y, axis=1).max())
    eps = epsilon_cover(x, omega_boundary)
    if K is None:
        _, grads, _ = map_eval(phi, omega_boundary.points)
        K = float(np.linalg.norm(grads, ord=2, axis=(1, 2)).max())
    rhs = misfit + K * eps
    return BoundaryBoundReport(lhs, misfit, K, eps, rhs, bool(lhs <= rhs * (1 + slack)))

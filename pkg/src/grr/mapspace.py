"""Tensorized polynomial displacement spaces over a box.

A space is described per displacement component by one 1-D factor basis per
direction (Legendre combinations on the box interval), a derivative shift
(nonzero only for gradient-of-potential spaces) and a coefficient matrix
``T`` mapping the M global coefficients to tensor-product coefficients.
The global basis is orthonormal in the full H^2(box) inner product.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
from numpy.polynomial import legendre

from .errors import ConfigurationError, DomainError

log = logging.getLogger(__name__)

_EIG_DROP = 1e-12
_BOX_TOL = 1e-10


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.ravel(self.lo))
        hi = tuple(float(v) for v in np.ravel(self.hi))
        if len(lo) != len(hi) or len(lo) not in (2, 3):
            raise ConfigurationError("box corners must both be 2-D or 3-D")
        if any(h <= l for l, h in zip(lo, hi)):
            raise ConfigurationError("box must have lo < hi in every direction")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def widths(self) -> np.ndarray:
        return np.subtract(self.hi, self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, points, tol=_BOX_TOL) -> np.ndarray:
        pts = np.atleast_2d(points)
        slack = tol * np.maximum(1.0, self.widths)
        return np.all((pts >= np.array(self.lo) - slack) & (pts <= np.array(self.hi) + slack), axis=1)


def _derivative_matrix(deg: int) -> np.ndarray:
    """Legendre-coefficient derivative operator on [-1, 1]."""
    D = np.zeros((deg + 1, deg + 1))
    for k in range(deg + 1):
        e = np.zeros(deg + 1)
        e[k] = 1.0
        dk = legendre.legder(e)
        D[: len(dk), k] = dk
    return D


@dataclass(frozen=True, eq=False)
class Factor1D:
    """A set of 1-D polynomials on [lo, hi] stored as Legendre coefficients.

    ``coef`` has shape (deg + 1, r): column j holds the coefficients of the
    j-th function in the Legendre basis of the reference interval [-1, 1].
    """

    lo: float
    hi: float
    coef: np.ndarray

    @property
    def deg(self) -> int:
        return self.coef.shape[0] - 1

    @property
    def size(self) -> int:
        return self.coef.shape[1]

    @cached_property
    def _dmat(self) -> np.ndarray:
        return _derivative_matrix(self.deg)

    def derivative_coef(self, order: int) -> np.ndarray:
        C = self.coef
        for _ in range(order):
            C = self._dmat @ C
        return C * (2.0 / (self.hi - self.lo)) ** order

    def eval(self, x, order: int = 0) -> np.ndarray:
        """Values of the ``order``-th derivatives, shape (len(x), r)."""
        s = (2.0 * np.asarray(x, dtype=float) - (self.lo + self.hi)) / (self.hi - self.lo)
        V = legendre.legvander(s, self.deg)
        return V @ self.derivative_coef(order)

    def mass(self, order: int, other: "Factor1D | None" = None, order_other: int | None = None) -> np.ndarray:
        """Exact integrals of products of derivatives over [lo, hi]."""
        other = self if other is None else other
        order_other = order if order_other is None else order_other
        n = (self.deg + other.deg) // 2 + 2
        s, w = legendre.leggauss(n)
        x = self.lo + (s + 1) * (self.hi - self.lo) / 2
        w = w * (self.hi - self.lo) / 2
        A = self.eval(x, order)
        B = other.eval(x, order_other)
        return A.T @ (w[:, None] * B)


def _prebasis_1d(lo, hi, coef, low, high) -> np.ndarray:
    """Recombine columns into generalized eigenvectors of (M_high, M_low).

    The result is orthonormal in the ``low``-derivative product and diagonal
    in the ``high`` one, which makes tensor products nearly orthogonal in the
    H2 product after diagonal scaling.
    """
    f = Factor1D(lo, hi, coef)
    A, B = f.mass(high), f.mass(low)
    _, V = scipy.linalg.eigh((A + A.T) / 2, (B + B.T) / 2)
    return coef @ V


def factor_full(lo, hi, degree) -> Factor1D:
    """All polynomials of degree <= ``degree``."""
    coef = np.eye(degree + 1)
    return Factor1D(lo, hi, _prebasis_1d(lo, hi, coef, 0, 2))


def factor_vanishing(lo, hi, degree) -> Factor1D:
    """Polynomials of degree <= ``degree`` vanishing at both endpoints."""
    if degree < 2:
        raise ConfigurationError("need degree >= 2 for endpoint-vanishing polynomials")
    coef = np.zeros((degree + 1, degree - 1))
    for k in range(degree - 1):
        coef[k + 2, k] = 1.0
        coef[k, k] = -1.0
    return Factor1D(lo, hi, _prebasis_1d(lo, hi, coef, 0, 2))


def factor_neumann(lo, hi, degree) -> Factor1D:
    """Polynomials of degree <= ``degree`` with zero derivative at both endpoints.

    Column 0 is the constant; the remaining columns are antiderivatives of
    endpoint-vanishing polynomials, orthonormalized w.r.t. derivative orders
    1 and 3 (the potential's gradient is what enters the displacement).
    """
    if degree < 3:
        raise ConfigurationError("need degree >= 3 for a non-constant Neumann polynomial")
    nb = degree - 2
    coef = np.zeros((degree + 1, nb))
    for k in range(nb):
        b = np.zeros(k + 3)
        b[k + 2], b[k] = 1.0, -1.0
        ib = legendre.legint(b)
        ib[0] -= legendre.legval(-1.0, ib)
        coef[: len(ib), k] = ib
    coef = _prebasis_1d(lo, hi, coef, 1, 3)
    const = np.zeros((degree + 1, 1))
    const[0, 0] = 1.0 / np.sqrt(hi - lo)
    return Factor1D(lo, hi, np.hstack([const, coef]))


@dataclass(frozen=True, eq=False)
class ComponentRep:
    """Tensor representation of one displacement component.

    ``T`` has shape (prod(factor sizes), M); the component's value at x is
    sum_idx (T a)[idx] * prod_j factors[j](x_j)^{(shift[j])}[idx_j].
    """

    factors: tuple
    shift: tuple
    T: np.ndarray

    @property
    def sizes(self) -> tuple:
        return tuple(f.size for f in self.factors)


def _multi_indices(d, max_order):
    """Derivative multi-indices up to a total order, with their multiplicity in
    the Frobenius norm of the derivative tensor (number of orderings)."""
    out = []
    for beta in itertools.product(range(max_order + 1), repeat=d):
        k = sum(beta)
        if k <= max_order:
            mult = math.factorial(k)
            for b in beta:
                mult //= math.factorial(b)
            out.append((beta, k, mult))
    return out


def _orthonormal_columns(G) -> np.ndarray:
    """Columns C with C^T G C = I, via a Jacobi-scaled symmetric eigensolve."""
    scale = 1.0 / np.sqrt(np.diag(G))
    Gs = G * scale[:, None] * scale[None, :]
    lam, V = np.linalg.eigh((Gs + Gs.T) / 2)
    keep = lam > _EIG_DROP * lam.max()
    if not keep.all():
        log.debug("dropping %d near-null directions", int((~keep).sum()))
    return scale[:, None] * (V[:, keep] / np.sqrt(lam[keep]))


def _kron_all(mats):
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def _component_gram(rep_factors, shift, orders):
    """Gram matrix of a component's tensor functions summed over derivative
    multi-indices whose total order lies in ``orders``."""
    d = len(rep_factors)
    cache = {}

    def M(j, p):
        key = (j, p)
        if key not in cache:
            cache[key] = rep_factors[j].mass(p)
        return cache[key]

    n = int(np.prod([f.size for f in rep_factors]))
    G = np.zeros((n, n))
    for beta, k, mult in _multi_indices(d, max(orders)):
        if k not in orders:
            continue
        G += mult * _kron_all([M(j, shift[j] + beta[j]) for j in range(d)])
    return G


class MapSpace:
    """Orthonormal basis of a tensorized polynomial displacement space.

    Parameters
    ----------
    box : Box
    n_lp : int
        Polynomial degree per direction (``convention="degree"``) or number of
        1-D functions per direction (``convention="dimension"``, degree n_lp-1).
    bc : {"none", "normal_zero"}
    kind : {"full", "potential"}
    """

    def __init__(self, box: Box, n_lp: int, bc: str = "normal_zero", kind: str = "full",
                 convention: str = "degree", _components=None, _parent_checksum=None):
        if bc not in ("none", "normal_zero"):
            raise ConfigurationError(f"unknown boundary condition {bc!r}")
        if kind not in ("full", "potential", "reduced"):
            raise ConfigurationError(f"unknown space kind {kind!r}")
        if convention not in ("degree", "dimension"):
            raise ConfigurationError(f"unknown n_lp convention {convention!r}")
        self.box = box
        self.n_lp = int(n_lp)
        self.bc = bc
        self.kind = kind
        self.convention = convention
        self.degree = self.n_lp if convention == "degree" else self.n_lp - 1
        self.parent_checksum = _parent_checksum
        if _components is not None:
            self.components = tuple(_components)
            return
        if self.degree < 2:
            raise ConfigurationError(
                "polynomial degree must be at least 2; the H2 seminorm would vanish on the whole space"
            )
        if kind == "full":
            self.components = self._build_full()
        elif kind == "potential":
            self.components = self._build_potential()
        else:
            raise ConfigurationError("reduced spaces are built with reduce_space")

    # -- construction ---------------------------------------------------------

    def _build_full(self):
        d, lo, hi = self.dim, self.box.lo, self.box.hi
        full = [factor_full(lo[j], hi[j], self.degree) for j in range(d)]
        reps = []
        for c in range(d):
            facs = list(full)
            if self.bc == "normal_zero":
                facs[c] = factor_vanishing(lo[c], hi[c], self.degree)
            facs = tuple(facs)
            reps.append((facs, (0,) * d))
        # the Gram is block diagonal over components: orthonormalize block by block
        blocks = []
        for facs, shift in reps:
            blocks.append(_orthonormal_columns(_component_gram(facs, shift, (0, 1, 2))))
        M = sum(b.shape[1] for b in blocks)
        out, start = [], 0
        for (facs, shift), cols in zip(reps, blocks):
            T = np.zeros((cols.shape[0], M))
            T[:, start:start + cols.shape[1]] = cols
            start += cols.shape[1]
            out.append(ComponentRep(facs, shift, T))
        return tuple(out)

    def _build_potential(self):
        # displacement = grad(phi), phi in tensor Neumann polynomials without constants
        d, lo, hi = self.dim, self.box.lo, self.box.hi
        facs = tuple(factor_neumann(lo[j], hi[j], self.degree) for j in range(d))
        sizes = [f.size for f in facs]
        n = int(np.prod(sizes))
        keep_idx = np.arange(1, n)  # flat index 0 is the all-constant product
        G = np.zeros((n, n))
        for c in range(d):
            shift = tuple(1 if j == c else 0 for j in range(d))
            G += _component_gram(facs, shift, (0, 1, 2))
        sub = _orthonormal_columns(G[np.ix_(keep_idx, keep_idx)])
        cols = np.zeros((n, sub.shape[1]))
        cols[keep_idx] = sub
        return tuple(
            ComponentRep(facs, tuple(1 if j == c else 0 for j in range(d)), cols) for c in range(d)
        )

    # -- basic properties -----------------------------------------------------

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def M(self) -> int:
        return self.components[0].T.shape[1]

    def __repr__(self):
        return (f"MapSpace(box={self.box}, n_lp={self.n_lp}, bc={self.bc!r}, kind={self.kind!r}, "
                f"convention={self.convention!r}, M={self.M})")

    @cached_property
    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.box.lo, self.box.hi, self.n_lp, self.bc, self.kind, self.convention)).encode())
        for rep in self.components:
            h.update(np.ascontiguousarray(rep.T).tobytes())
            for f in rep.factors:
                h.update(np.ascontiguousarray(f.coef).tobytes())
        return h.hexdigest()

    # -- evaluation -------------------------------------------------------------

    def _check_points(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise DomainError(f"expected {self.dim}-dimensional points")
        if not np.all(np.isfinite(pts)):
            raise DomainError("non-finite evaluation point")
        inside = self.box.contains(pts)
        if not inside.all():
            bad = pts[~inside][0]
            raise DomainError(f"point {bad.tolist()} lies outside the box {self.box.lo}..{self.box.hi}")
        return pts

    def _factor_tables(self, pts, max_order):
        """Per component and direction: list of derivative tables up to the needed order."""
        tables = []
        for rep in self.components:
            per_dir = []
            for j, f in enumerate(rep.factors):
                per_dir.append([f.eval(pts[:, j], rep.shift[j] + k) for k in range(max_order + 1)])
            tables.append(per_dir)
        return tables

    @staticmethod
    def _contract(C, F):
        """sum over tensor index of C[i0,...,id-1] * prod_j F[j][p, i_j] -> (p,)"""
        X = F[0] @ C.reshape(C.shape[0], -1)  # (p, rest)
        for Fj in F[1:]:
            X = X.reshape(X.shape[0], Fj.shape[1], -1)
            X = np.einsum("pj...,pj->p...", X, Fj)
        return X.reshape(-1)

    @staticmethod
    def _rowkron(F):
        """Row-wise Kronecker product of per-direction tables -> (p, prod r)."""
        out = F[0]
        for Fj in F[1:]:
            out = (out[:, :, None] * Fj[:, None, :]).reshape(out.shape[0], -1)
        return out

    def displacement(self, a, points, order: int = 2):
        """Displacement u = sum a_m psi_m and derivatives at ``points``.

        Returns (values (p, d), gradients (p, d, d) or None, hessians (p, d, d, d) or None);
        gradients[p, k, j] = d u_k / d x_j.
        """
        pts = self._check_points(points)
        a = np.asarray(a, dtype=float)
        d, p = self.dim, len(pts)
        tables = self._factor_tables(pts, order)
        vals = np.zeros((p, d))
        grads = np.zeros((p, d, d)) if order >= 1 else None
        hess = np.zeros((p, d, d, d)) if order >= 2 else None
        for k, rep in enumerate(self.components):
            C = (rep.T @ a).reshape(rep.sizes)
            tab = tables[k]
            vals[:, k] = self._contract(C, [tab[j][0] for j in range(d)])
            if order >= 1:
                for i in range(d):
                    F = [tab[j][1 if j == i else 0] for j in range(d)]
                    grads[:, k, i] = self._contract(C, F)
            if order >= 2:
                for i in range(d):
                    for j in range(i, d):
                        F = []
                        for l in range(d):
                            o = (l == i) + (l == j)
                            F.append(tab[l][o])
                        v = self._contract(C, F)
                        hess[:, k, i, j] = v
                        hess[:, k, j, i] = v
        return vals, grads, hess

    def basis_eval(self, points, order: int = 0) -> np.ndarray:
        """Basis derivatives of a fixed order at ``points``.

        order 0 -> (p, d, M); order 1 -> (p, d, d, M) with [p, k, j, m] = d_j psi_{m,k};
        order 2 -> (p, d, d, d, M).
        """
        pts = self._check_points(points)
        d, p = self.dim, len(pts)
        tables = self._factor_tables(pts, order)
        out = np.zeros((p, d) + (d,) * order + (self.M,))
        for k, rep in enumerate(self.components):
            tab = tables[k]
            for deriv in itertools.product(range(d), repeat=order):
                F = [tab[l][sum(1 for q in deriv if q == l)] for l in range(d)]
                out[(slice(None), k) + deriv] = self._rowkron(F) @ rep.T
        return out

    # -- quadratic forms --------------------------------------------------------

    def _gram_in_orders(self, orders) -> np.ndarray:
        G = np.zeros((self.M, self.M))
        for rep in self.components:
            K = _component_gram(rep.factors, rep.shift, orders)
            G += rep.T.T @ K @ rep.T
        return (G + G.T) / 2

    @cached_property
    def seminorm_matrix(self) -> np.ndarray:
        """S with |u|^2_{H2 seminorm} = a^T S a (second derivatives only)."""
        return self._gram_in_orders((2,))

    @cached_property
    def gram_matrix(self) -> np.ndarray:
        """Full H2 Gram of the basis (identity up to roundoff)."""
        return self._gram_in_orders((0, 1, 2))

    # -- quadrature -------------------------------------------------------------

    def quadrature(self, n_per_dir: int | None = None):
        """Tensor Gauss-Legendre points and weights over the box."""
        n = self.degree + 2 if n_per_dir is None else int(n_per_dir)
        s, w = legendre.leggauss(n)
        xs, ws = [], []
        for lo, hi in zip(self.box.lo, self.box.hi):
            xs.append(lo + (s + 1) * (hi - lo) / 2)
            ws.append(w * (hi - lo) / 2)
        grids = np.meshgrid(*xs, indexing="ij")
        pts = np.column_stack([g.ravel() for g in grids])
        wgrid = np.meshgrid(*ws, indexing="ij")
        weights = np.prod(np.column_stack([g.ravel() for g in wgrid]), axis=1)
        return pts, weights

    def boundary_samples(self, n_per_face: int = 200, seed: int = 0):
        """Random points on each box face with outward normals."""
        rng = np.random.default_rng(seed)
        lo, hi = np.array(self.box.lo), np.array(self.box.hi)
        pts, normals = [], []
        for j in range(self.dim):
            for side, val in ((-1, lo[j]), (1, hi[j])):
                p = lo + rng.random((n_per_face, self.dim)) * (hi - lo)
                p[:, j] = val
                n = np.zeros((n_per_face, self.dim))
                n[:, j] = side
                pts.append(p)
                normals.append(n)
        return np.vstack(pts), np.vstack(normals)

    def mapping(self, a=None) -> "Mapping":
        return Mapping(self, np.zeros(self.M) if a is None else a)

    def fit(self, fn, n_per_dir: int | None = None):
        """Coefficients of the best H0 least-squares fit of a displacement field.

        ``fn`` maps (p, d) points to (p, d) displacements; exact for fields in the space.
        """
        pts, w = self.quadrature(n_per_dir or self.degree + 3)
        B = self.basis_eval(pts, 0)  # (p, d, M)
        U = np.asarray(fn(pts), dtype=float)
        sw = np.sqrt(w)[:, None, None]
        A = (B * sw).reshape(-1, self.M)
        rhs = (U[:, :, None] * sw).reshape(-1)
        coef, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        return coef

    # -- serialization ----------------------------------------------------------

    def save(self, path) -> None:
        arrays = {
            "meta": np.array([repr({
                "lo": self.box.lo, "hi": self.box.hi, "n_lp": self.n_lp, "bc": self.bc,
                "kind": self.kind, "convention": self.convention,
                "parent_checksum": self.parent_checksum, "checksum": self.checksum,
            })]),
        }
        for c, rep in enumerate(self.components):
            arrays[f"T{c}"] = rep.T
            arrays[f"shift{c}"] = np.array(rep.shift)
            for j, f in enumerate(rep.factors):
                arrays[f"F{c}_{j}"] = f.coef
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "MapSpace":
        import ast

        with np.load(path, allow_pickle=False) as z:
            meta = ast.literal_eval(str(z["meta"][0]))
            box = Box(meta["lo"], meta["hi"])
            d = box.dim
            comps = []
            for c in range(d):
                facs = tuple(
                    Factor1D(box.lo[j], box.hi[j], z[f"F{c}_{j}"]) for j in range(d)
                )
                comps.append(ComponentRep(facs, tuple(int(v) for v in z[f"shift{c}"]), z[f"T{c}"]))
        space = cls(box, meta["n_lp"], meta["bc"], meta["kind"], meta["convention"],
                    _components=comps, _parent_checksum=meta["parent_checksum"])
        if space.checksum != meta["checksum"]:
            raise ConfigurationError(f"space file {path} failed its checksum")
        return space


def build_space(box: Box, n_lp: int, bc: str = "normal_zero", kind: str = "full",
                convention: str = "degree") -> MapSpace:
    return MapSpace(box, n_lp, bc, kind, convention)


def expected_dimension(d: int, n_lp: int, bc: str = "normal_zero", kind: str = "full",
                       convention: str = "degree") -> int:
    """Closed-form dimension of a space, used for cross-checks."""
    n1 = n_lp + 1 if convention == "degree" else n_lp  # 1-D functions per direction
    if kind == "potential":
        # degree-n potentials with zero normal derivative, constants removed
        return (n1 - 2) ** d - 1
    if bc == "normal_zero":
        return d * n1**d - 2 * d * n1 ** (d - 1)
    return d * n1**d


@dataclass(eq=False)
class Mapping:
    """Phi = id + sum_m a_m psi_m on a MapSpace."""

    space: MapSpace
    a: np.ndarray = field(default=None)

    def __post_init__(self):
        a = np.zeros(self.space.M) if self.a is None else np.array(self.a, dtype=float)
        if a.shape != (self.space.M,):
            raise ConfigurationError(f"coefficient vector must have length {self.space.M}")
        if not np.all(np.isfinite(a)):
            raise ConfigurationError("mapping coefficients must be finite")
        self.a = a

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        u, _, _ = self.space.displacement(self.a, pts, order=0)
        return pts + u

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, a=self.a, checksum=np.array([self.space.checksum]))

    @classmethod
    def load(cls, path, space: MapSpace) -> "Mapping":
        with np.load(path, allow_pickle=False) as z:
            if str(z["checksum"][0]) != space.checksum:
                raise ConfigurationError(f"mapping {path} was computed on a different space")
            return cls(space, z["a"])


def map_eval(phi: Mapping, points):
    """Phi, its Jacobian matrix and second partials at ``points``.

    Returns values (p, d), gradients (p, d, d) with [p, k, j] = d Phi_k / d x_j,
    and hessians (p, d, d, d) with [p, k, i, j] = d_ij Phi_k.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    u, du, ddu = phi.space.displacement(phi.a, pts, order=2)
    return pts + u, du + np.eye(phi.space.dim), ddu


def jacobian_det(phi: Mapping, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    _, du, _ = phi.space.displacement(phi.a, pts, order=1)
    return np.linalg.det(du + np.eye(phi.space.dim))


def h2_inner(u, v, n_per_dir: int | None = None) -> float:
    """Full H2(box) inner product of two displacement fields by Gauss quadrature.

    ``u`` and ``v`` are Mappings on the same space (their displacements are
    used) or (space, coefficient) pairs.
    """
    su, au = (u.space, u.a) if isinstance(u, Mapping) else u
    sv, av = (v.space, v.a) if isinstance(v, Mapping) else v
    if su.checksum != sv.checksum:
        raise ConfigurationError("h2_inner needs fields on the same space")
    pts, w = su.quadrature(n_per_dir or su.degree + 2)
    ua, ga, ha = su.displacement(au, pts, order=2)
    ub, gb, hb = su.displacement(av, pts, order=2)
    dens = (ua * ub).sum(1) + (ga * gb).sum((1, 2)) + (ha * hb).sum((1, 2, 3))
    return float(w @ dens)

"""Objective functionals for mapping coefficients, with analytic gradients.

Kinds:
  h2           half mean-squared H2 seminorm of Phi over the box
  exp_jac      mean of exp((eps - J) / C_exp) over the box (+ h2 penalty)
  exp_mesh     exponential anisotropy penalty on deformed mesh elements (+ h2 penalty)
  lin_elastic  linear isotropic strain energy of the displacement over the box
  neohookean   compressible neo-Hookean energy of Phi over the box
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError
from .mapspace import MapSpace, Mapping
from .mesh import Mesh, shape_eval

log = logging.getLogger(__name__)

EXP_CLAMP = 700.0
INVERTED_Q_OFFSET = 1e3
KINDS = ("h2", "exp_jac", "exp_mesh", "lin_elastic", "neohookean")


def lame_from_young(E=1.0, nu=0.3):
    """(lambda1, lambda2) = (nu / ((1 - 2 nu)(1 + nu)), E / (1 + nu))."""
    return nu / ((1 - 2 * nu) * (1 + nu)), E / (1 + nu)


_L1, _L2 = lame_from_young()


@dataclass
class ObjectiveConfig:
    kind: str = "exp_jac"
    epsilon: float = 0.1
    c_exp: float | None = None  # default 0.025 * epsilon
    kappa_msh: float = 10.0
    lambda1: float = _L1
    lambda2: float = _L2
    quad_order: int | None = None  # default degree + 2 per direction
    mesh: Mesh | None = None
    include_penalty: bool | None = None  # default: on for exp kinds
    literal_mesh_sign: bool = False  # exp(kappa - q) instead of exp(q - kappa)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown objective kind {self.kind!r}; expected one of {KINDS}")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        if self.c_exp is None:
            self.c_exp = 0.025 * self.epsilon
        if self.c_exp <= 0:
            raise ConfigurationError("c_exp must be positive")
        if self.kappa_msh < 1:
            raise ConfigurationError("kappa_msh must be at least 1")
        if self.kind == "exp_mesh" and self.mesh is None:
            raise ConfigurationError("exp_mesh objective needs a mesh")
        if self.include_penalty is None:
            self.include_penalty = self.kind in ("exp_jac", "exp_mesh")

    def without_penalty(self) -> "ObjectiveConfig":
        return replace(self, include_penalty=False)


def _clamped_exp(arg):
    """exp(min(arg, 700)) and the derivative factor (0 where clamped)."""
    clamped = arg > EXP_CLAMP
    val = np.exp(np.minimum(arg, EXP_CLAMP))
    return val, np.where(clamped, 0.0, val)


def _cofactor(F):
    """Cofactor matrices d det(F) / dF for stacks of 2x2 or 3x3 matrices."""
    d = F.shape[-1]
    if d == 2:
        C = np.empty_like(F)
        C[..., 0, 0] = F[..., 1, 1]
        C[..., 0, 1] = -F[..., 1, 0]
        C[..., 1, 0] = -F[..., 0, 1]
        C[..., 1, 1] = F[..., 0, 0]
        return C
    C = np.empty_like(F)
    for i in range(3):
        for j in range(3):
            i1, i2 = (i + 1) % 3, (i + 2) % 3
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            C[..., i, j] = F[..., i1, j1] * F[..., i2, j2] - F[..., i1, j2] * F[..., i2, j1]
    return C


# -- pointwise kernels (physical quantities; shared with invariance tests) --------


def expjac_density(J, epsilon, c_exp):
    """exp((eps - J) / C_exp) and its derivative w.r.t. J."""
    val, dval = _clamped_exp((epsilon - J) / c_exp)
    return val, -dval / c_exp


def anisotropy(G, kappa, literal_sign=False):
    """Per-sample exp-mesh integrand from elemental Jacobians G (..., d, d).

    q = (|G|_F^2 / det^(2/d))^2 / d^2 ; integrand exp(q - kappa).
    Returns (integrand, d integrand / d G, q).
    """
    d = G.shape[-1]
    det = np.linalg.det(G)
    fro = np.einsum("...ij,...ij->...", G, G)
    pos = det > 0
    safe = np.where(pos, det, 1.0)
    scale = safe ** (-2.0 / d)
    rho = fro * scale
    q = np.where(pos, rho**2 / d**2, kappa + INVERTED_Q_OFFSET)
    sign = -1.0 if literal_sign else 1.0
    val, dval = _clamped_exp(sign * (q - kappa))
    # d rho / dG = scale * (2 G - (2/d) fro G^{-T}); G^{-T} = cof / det
    cof = _cofactor(G)
    drho = scale[..., None, None] * (
        2 * G - (2.0 / d) * (fro / safe)[..., None, None] * cof
    )
    dq = (2 * rho / d**2)[..., None, None] * drho
    dq = np.where(pos[..., None, None], dq, 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        # near-degenerate elements may overflow; line searches reject such points
        dval = sign * dval[..., None, None] * dq
    return val, dval, q


def linelastic_density(Du, lambda1, lambda2):
    """lambda1 (div u)^2 + 2 lambda2 |sym grad u|^2 and its derivative w.r.t. grad u."""
    d = Du.shape[-1]
    tr = np.trace(Du, axis1=-2, axis2=-1)
    sym = 0.5 * (Du + np.swapaxes(Du, -1, -2))
    val = lambda1 * tr**2 + 2 * lambda2 * np.einsum("...ij,...ij->...", sym, sym)
    dval = 2 * lambda1 * tr[..., None, None] * np.eye(d) + 4 * lambda2 * sym
    return val, dval


def neohookean_density(F, lambda1, lambda2):
    """1/2 lambda2 |F|^2 - lambda2 log J + lambda1 log^2 J; +inf where J <= 0."""
    J = np.linalg.det(F)
    if np.any(J <= 0):
        return np.full(J.shape, np.inf), None
    logJ = np.log(J)
    val = 0.5 * lambda2 * np.einsum("...ij,...ij->...", F, F) - lambda2 * logJ + lambda1 * logJ**2
    FinvT = _cofactor(F) / J[..., None, None]
    dval = lambda2 * F + (2 * lambda1 * logJ - lambda2)[..., None, None] * FinvT
    return val, dval


# -- assembled objective ------------------------------------------------------------


class Objective:
    """Objective evaluator bound to a space, with precomputed basis tables.

    Calling ``value_grad(a)`` returns the configured objective (including the
    H2 penalty when ``include_penalty``) and its gradient w.r.t. a.
    """

    def __init__(self, cfg: ObjectiveConfig, space: MapSpace):
        self.cfg = cfg
        self.space = space
        self.d = space.dim
        self.S = space.seminorm_matrix
        self.vol = space.box.volume
        if cfg.quad_order is not None and cfg.quad_order < space.degree + 1:
            raise ConfigurationError("quad_order must be at least the polynomial degree + 1")
        if cfg.kind in ("exp_jac", "lin_elastic", "neohookean"):
            n = cfg.quad_order or space.degree + 2
            self.qpts, self.qw = space.quadrature(n)
            # (p*d*d, M) with row (p, k, j) = d_j psi_{m,k}(x_p)
            self.E1 = space.basis_eval(self.qpts, 1).reshape(-1, space.M)
        if cfg.kind == "exp_mesh":
            self._init_mesh(cfg.mesh)

    def _init_mesh(self, mesh: Mesh):
        self.mesh = mesh
        self.nodes0 = mesh.nodes
        self.En = self.space.basis_eval(mesh.nodes, 0).reshape(-1, self.space.M)  # (Nn*d, M)
        pts, w = mesh.reference.quadrature()
        _, self.dl = shape_eval(mesh.reference, pts)  # (S, n_loc, d)
        self.sw = w
        vols = mesh.element_volumes()
        self.elem_weight = vols / vols.sum()  # |D_k| / |Omega|

    # individual terms ------------------------------------------------------------

    def penalty(self, a):
        Sa = self.S @ a
        return 0.5 * (a @ Sa) / self.vol, Sa / self.vol

    def _grad_field(self, a):
        return (self.E1 @ a).reshape(-1, self.d, self.d)

    def _pullback(self, dF):
        """Gradient w.r.t. a of sum_p w_p <dF_p, grad u(x_p)>."""
        return self.E1.T @ (self.qw[:, None, None] * dF).reshape(-1)

    def expjac(self, a):
        F = self._grad_field(a) + np.eye(self.d)
        J = np.linalg.det(F)
        val, dJ = expjac_density(J, self.cfg.epsilon, self.cfg.c_exp)
        f = self.qw @ val / self.vol
        # far outside the feasible region the gradient may overflow; the line search rejects it
        with np.errstate(over="ignore", invalid="ignore"):
            g = self._pullback(dJ[:, None, None] * _cofactor(F)) / self.vol
        return f, g

    def deformed_nodes(self, a):
        return self.nodes0 + (self.En @ a).reshape(-1, self.d)

    def expmesh(self, a):
        X = self.deformed_nodes(a)
        conn = self.mesh.connectivity
        G = np.einsum("kni,snj->ksij", X[conn], self.dl)
        val, dG, _ = anisotropy(G, self.cfg.kappa_msh, self.cfg.literal_mesh_sign)
        coef = self.elem_weight[:, None] * self.sw[None, :]
        f = float(np.sum(coef * val))
        # scatter dG back to nodes: dX[conn[k, n], i] += sum_s coef dG[k,s,i,j] dl[s,n,j]
        with np.errstate(over="ignore", invalid="ignore"):
            dXe = np.einsum("ks,ksij,snj->kni", coef, dG, self.dl)
            dX = np.zeros_like(X)
            np.add.at(dX, conn, dXe)
            return f, self.En.T @ dX.reshape(-1)

    def linelastic(self, a):
        Du = self._grad_field(a)
        val, dval = linelastic_density(Du, self.cfg.lambda1, self.cfg.lambda2)
        return float(self.qw @ val), self._pullback(dval)

    def neohookean(self, a):
        F = self._grad_field(a) + np.eye(self.d)
        val, dval = neohookean_density(F, self.cfg.lambda1, self.cfg.lambda2)
        if dval is None:
            return np.inf, np.full(self.space.M, np.nan)
        return float(self.qw @ val), self._pullback(dval)

    def term(self, a):
        """The kind-specific term without the H2 penalty."""
        kind = self.cfg.kind
        if kind == "h2":
            return self.penalty(a)
        return {
            "exp_jac": self.expjac,
            "exp_mesh": self.expmesh,
            "lin_elastic": self.linelastic,
            "neohookean": self.neohookean,
        }[kind](a)

    def value_grad(self, a):
        a = np.asarray(a, dtype=float)
        f, g = self.term(a)
        if self.cfg.include_penalty and self.cfg.kind != "h2":
            p, gp = self.penalty(a)
            f, g = f + p, g + gp
        return float(f), g

    __call__ = value_grad


def objective_value_grad(cfg: ObjectiveConfig, phi: Mapping):
    """One-shot evaluation; build an Objective once for repeated calls."""
    return Objective(cfg, phi.space).value_grad(phi.a)


def penalty_h2(phi: Mapping) -> float:
    return Objective(ObjectiveConfig(kind="h2"), phi.space).penalty(phi.a)[0]


def f_expjac(phi: Mapping, epsilon=0.1, c_exp=None, quad_order=None) -> float:
    cfg = ObjectiveConfig(kind="exp_jac", epsilon=epsilon, c_exp=c_exp, quad_order=quad_order)
    return Objective(cfg, phi.space).expjac(phi.a)[0]


def f_expmesh(phi: Mapping, mesh: Mesh, kappa_msh=10.0, literal_mesh_sign=False) -> float:
    cfg = ObjectiveConfig(kind="exp_mesh", kappa_msh=kappa_msh, mesh=mesh,
                          literal_mesh_sign=literal_mesh_sign)
    return Objective(cfg, phi.space).expmesh(phi.a)[0]


def f_linelastic(phi: Mapping, lambda1=_L1, lambda2=_L2, quad_order=None) -> float:
    cfg = ObjectiveConfig(kind="lin_elastic", lambda1=lambda1, lambda2=lambda2, quad_order=quad_order)
    return Objective(cfg, phi.space).linelastic(phi.a)[0]


def f_neohookean(phi: Mapping, lambda1=_L1, lambda2=_L2, quad_order=None) -> float:
    cfg = ObjectiveConfig(kind="neohookean", lambda1=lambda1, lambda2=lambda2, quad_order=quad_order)
    return Objective(cfg, phi.space).neohookean(phi.a)[0]


def expmesh_from_nodes(mesh: Mesh, nodes, kappa_msh=10.0, literal_mesh_sign=False) -> float:
    """Exp-mesh functional evaluated directly from deformed node positions."""
    pts, w = mesh.reference.quadrature()
    G = mesh.element_gradients(pts, nodes)
    val, _, _ = anisotropy(G, kappa_msh, literal_mesh_sign)
    vols = mesh.element_volumes()
    return float(np.sum((vols / vols.sum())[:, None] * w[None, :] * val))

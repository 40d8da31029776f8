"""Simplicial Lagrange meshes, elemental maps and deformed-mesh quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DomainError, MeshParseError

_SIMPLEX_TOL = 1e-12

# 6-point degree-4 rule on the unit triangle (weights sum to the area 1/2).
_TRI_DEG4_A = (0.445948490915965, 0.091576213509771)
_TRI_DEG4_W = (0.223381589678011 / 2.0, 0.109951743655322 / 2.0)


def _tri_deg4_rule():
    a, b = _TRI_DEG4_A
    pts = np.array(
        [
            [a, a], [1 - 2 * a, a], [a, 1 - 2 * a],
            [b, b], [1 - 2 * b, b], [b, 1 - 2 * b],
        ]
    )
    w = np.array([_TRI_DEG4_W[0]] * 3 + [_TRI_DEG4_W[1]] * 3)
    return pts, w


def _tet_deg2_rule():
    a, b = 0.5854101966249685, 0.1381966011250105
    pts = np.array([[b, b, b], [a, b, b], [b, a, b], [b, b, a]])
    return pts, np.full(4, 1.0 / 24.0)


def simplex_volume(d: int) -> float:
    """Volume of the unit reference simplex, 1/d!."""
    return 1.0 / math.factorial(d)


@dataclass(frozen=True)
class ReferenceElement:
    """Lagrange element of degree 1 or 2 on the unit simplex.

    Local node order: vertices first (origin, then unit vectors), then edge
    midpoints for degree 2 in the order of ``edges``.
    """

    dim: int
    degree: int

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise DomainError(f"unsupported dimension {self.dim}")
        if self.degree not in (1, 2):
            raise DomainError(f"unsupported element degree {self.degree}")

    @property
    def edges(self) -> list[tuple[int, int]]:
        if self.dim == 2:
            return [(0, 1), (1, 2), (2, 0)]
        return [(0, 1), (1, 2), (2, 0), (0, 3), (1, 3), (2, 3)]

    @property
    def n_local(self) -> int:
        return math.comb(self.dim + self.degree, self.degree)

    @property
    def local_nodes(self) -> np.ndarray:
        d = self.dim
        verts = np.vstack([np.zeros(d), np.eye(d)])
        if self.degree == 1:
            return verts
        mids = np.array([(verts[i] + verts[j]) / 2 for i, j in self.edges])
        return np.vstack([verts, mids])

    def quadrature(self):
        """Sample points and weights used for Jacobian sampling and integrals."""
        if self.degree == 1:
            return np.full((1, self.dim), 1.0 / (self.dim + 1)), np.array([simplex_volume(self.dim)])
        return _tri_deg4_rule() if self.dim == 2 else _tet_deg2_rule()


@lru_cache(maxsize=None)
def reference_element(dim: int, degree: int) -> ReferenceElement:
    return ReferenceElement(dim, degree)


def shape_eval(ref: ReferenceElement, points):
    """Lagrange shape function values and gradients on the reference simplex.

    Parameters
    ----------
    ref : ReferenceElement
    points : array_like, shape (d,) or (S, d)

    Returns
    -------
    values : ndarray, shape (n_local,) or (S, n_local)
    gradients : ndarray, shape (n_local, d) or (S, n_local, d)
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != ref.dim:
        raise DomainError(f"expected {ref.dim}-dimensional points, got {pts.shape[1]}")
    lam0 = 1.0 - pts.sum(axis=1)
    if np.any(pts < -_SIMPLEX_TOL) or np.any(lam0 < -_SIMPLEX_TOL):
        raise DomainError("point outside the reference simplex")

    d = ref.dim
    S = pts.shape[0]
    # Barycentric coordinates and their (constant) gradients.
    lam = np.column_stack([lam0, pts])
    dlam = np.vstack([-np.ones(d), np.eye(d)])

    if ref.degree == 1:
        vals = lam
        grads = np.broadcast_to(dlam, (S, d + 1, d)).copy()
    else:
        n = ref.n_local
        vals = np.empty((S, n))
        grads = np.empty((S, n, d))
        for i in range(d + 1):
            vals[:, i] = lam[:, i] * (2 * lam[:, i] - 1)
            grads[:, i, :] = (4 * lam[:, i] - 1)[:, None] * dlam[i]
        for e, (i, j) in enumerate(ref.edges, start=d + 1):
            vals[:, e] = 4 * lam[:, i] * lam[:, j]
            grads[:, e, :] = 4 * (lam[:, j][:, None] * dlam[i] + lam[:, i][:, None] * dlam[j])
    if single:
        return vals[0], grads[0]
    return vals, grads


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial Lagrange mesh with 0-based connectivity."""

    nodes: np.ndarray
    connectivity: np.ndarray
    degree: int = 1
    _ref: ReferenceElement = field(init=False, repr=False)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        conn = np.array(self.connectivity, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] not in (2, 3):
            raise DomainError("nodes must be an (N, 2) or (N, 3) array")
        ref = reference_element(nodes.shape[1], self.degree)
        if conn.ndim != 2 or conn.shape[1] != ref.n_local:
            raise DomainError(
                f"each element needs {ref.n_local} nodes for d={ref.dim}, p={self.degree}"
            )
        if conn.size and (conn.min() < 0 or conn.max() >= len(nodes)):
            raise DomainError("connectivity references a missing node")
        nodes.setflags(write=False)
        conn.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "connectivity", conn)
        object.__setattr__(self, "_ref", ref)
        dets = self.jacobian_dets()
        if dets.size and dets.min() <= 0:
            bad = int(np.argmin(dets.min(axis=1)))
            raise DomainError(f"element {bad} has non-positive Jacobian determinant")

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elems(self) -> int:
        return self.connectivity.shape[0]

    @property
    def reference(self) -> ReferenceElement:
        return self._ref

    @property
    def vertex_connectivity(self) -> np.ndarray:
        return self.connectivity[:, : self.dim + 1]

    def element_gradients(self, ref_points, nodes=None) -> np.ndarray:
        """Jacobians of all elemental maps at the given reference points.

        Returns an array of shape (N_e, S, d, d) with entry [k, s, i, j] the
        derivative of component i w.r.t. reference coordinate j.
        """
        X = self.nodes if nodes is None else np.asarray(nodes, dtype=float)
        _, dl = shape_eval(self._ref, np.atleast_2d(ref_points))
        Xe = X[self.connectivity]  # (Ne, n_loc, d)
        return np.einsum("kni,snj->ksij", Xe, dl)

    def jacobian_dets(self, ref_points=None, nodes=None) -> np.ndarray:
        if ref_points is None:
            ref_points, _ = self._ref.quadrature()
        return np.linalg.det(self.element_gradients(ref_points, nodes))

    def element_volumes(self) -> np.ndarray:
        """Physical element measures |D_k|."""
        pts, w = self._ref.quadrature()
        return np.abs(self.jacobian_dets(pts)) @ w

    def with_nodes(self, nodes) -> "Mesh":
        """Same connectivity with new node positions, skipping the orientation check."""
        new = object.__new__(Mesh)
        nodes = np.array(nodes, dtype=float)
        nodes.setflags(write=False)
        object.__setattr__(new, "nodes", nodes)
        object.__setattr__(new, "connectivity", self.connectivity)
        object.__setattr__(new, "degree", self.degree)
        object.__setattr__(new, "_ref", self._ref)
        return new


def elemental_map(mesh: Mesh, k: int, ref_point, displacement=None):
    """Evaluate the elemental map of element ``k`` at a reference point.

    ``displacement`` is an optional (N_nodes, d) array added to the nodes,
    giving the deformed elemental map.

    Returns
    -------
    x : ndarray (d,)
    grad : ndarray (d, d)
    det : float
    """
    if not 0 <= k < mesh.n_elems:
        raise IndexError(f"element index {k} out of range")
    vals, grads = shape_eval(mesh.reference, np.asarray(ref_point, dtype=float))
    Xe = mesh.nodes[mesh.connectivity[k]]
    if displacement is not None:
        Xe = Xe + np.asarray(displacement, dtype=float)[mesh.connectivity[k]]
    x = vals @ Xe
    G = Xe.T @ grads
    return x, G, float(np.linalg.det(G))


def radius_ratio(vertices) -> np.ndarray | float:
    """Inradius over circumradius of triangles, in [0, 1/2].

    ``vertices`` has shape (3, 2) or (..., 3, 2). Degenerate triangles give 0.
    """
    v = np.asarray(vertices, dtype=float)
    a = np.linalg.norm(v[..., 1, :] - v[..., 2, :], axis=-1)
    b = np.linalg.norm(v[..., 2, :] - v[..., 0, :], axis=-1)
    c = np.linalg.norm(v[..., 0, :] - v[..., 1, :], axis=-1)
    area2 = _signed_area2(v)
    denom = a * b * c * (a + b + c)
    with np.errstate(divide="ignore", invalid="ignore"):
        # 8 A^2 / (abc (a+b+c)), with A = area2 / 2
        ratio = np.where(denom > 0, 2.0 * area2**2 / denom, 0.0)
    ratio = np.clip(ratio, 0.0, 0.5)
    return float(ratio) if ratio.ndim == 0 else ratio


def _signed_area2(v):
    """Twice the signed area of triangles given as (..., 3, 2)."""
    e1 = v[..., 1, :] - v[..., 0, :]
    e2 = v[..., 2, :] - v[..., 0, :]
    return e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]


def _deformed_nodes(mesh: Mesh, phi) -> np.ndarray:
    if phi is None:
        return mesh.nodes
    if callable(phi):
        return np.asarray(phi(mesh.nodes), dtype=float)
    out = np.asarray(phi, dtype=float)
    if out.shape != mesh.nodes.shape:
        raise DomainError("deformed node array must match the mesh node array")
    return out


def mesh_quality(mesh: Mesh, phi=None):
    """Radius ratios of the deformed vertex triangles (d = 2).

    ``phi`` is a callable mapping (N, d) points to (N, d) points, an array of
    deformed node positions, or None for the undeformed mesh.

    Ratios are signed: an element whose orientation flips under the
    deformation reports the negated ratio, so ``q_min > 0`` certifies that
    no element is inverted.

    Returns
    -------
    q_min : float
    per_element : ndarray (N_e,)
    """
    if mesh.dim != 2:
        raise DomainError("radius ratio is defined for triangles only")
    Y = _deformed_nodes(mesh, phi)
    tri = Y[mesh.vertex_connectivity]
    q = radius_ratio(tri)
    sign = np.sign(_signed_area2(tri) * _signed_area2(mesh.nodes[mesh.vertex_connectivity]))
    q = np.atleast_1d(q) * np.where(sign > 0, 1.0, -1.0)
    return float(q.min()), q


def _sample_points(ref: ReferenceElement, samples_per_elem: int | None):
    if ref.degree == 1:
        return np.full((1, ref.dim), 1.0 / (ref.dim + 1))
    pts, _ = ref.quadrature()
    if samples_per_elem is None or samples_per_elem <= len(pts):
        return pts
    # barycentric lattice dense enough for the requested count (vertices included)
    n = 1
    while math.comb(n + ref.dim, ref.dim) < samples_per_elem:
        n += 1
    grid = [
        np.array(idx[: ref.dim], dtype=float) / n
        for idx in np.ndindex(*([n + 1] * ref.dim))
        if sum(idx[: ref.dim]) <= n
    ]
    return np.vstack([pts] + [np.array(grid)])


def discrete_bijectivity(mesh: Mesh, phi=None, samples_per_elem: int | None = None):
    """Minimum normalized elemental Jacobian of the deformed mesh.

    For degree-1 meshes the elemental Jacobian is constant and one sample is
    exact; degree-2 meshes are sampled at the element quadrature points (or a
    denser barycentric lattice when ``samples_per_elem`` exceeds 6).

    Returns
    -------
    min_det : float
        min over elements and samples of det(grad deformed map) / det(grad map);
        1 for the identity.
    ok : bool
    """
    if samples_per_elem is not None and samples_per_elem < 1:
        raise DomainError("samples_per_elem must be at least 1")
    pts = _sample_points(mesh.reference, samples_per_elem)
    Y = _deformed_nodes(mesh, phi)
    det0 = mesh.jacobian_dets(pts)
    det1 = mesh.jacobian_dets(pts, nodes=Y)
    ratio = det1 / det0
    min_det = float(ratio.min())
    return min_det, bool(min_det > 0)


# ----------------------------------------------------------------------------
# text format


def write_mesh(mesh: Mesh, path) -> None:
    """Write the mesh text format (1-based connectivity, round-trip exact floats)."""
    lines = [f"{mesh.dim} {mesh.degree} {mesh.n_nodes} {mesh.n_elems}"]
    lines += [" ".join(repr(float(c)) for c in row) for row in mesh.nodes]
    lines += [" ".join(str(int(i) + 1) for i in row) for row in mesh.connectivity]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    """Parse the mesh text format; errors report the 1-based line number."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MeshParseError(f"cannot read mesh file: {exc.strerror}", path=path) from exc

    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].split()
        if body:
            rows.append((lineno, body))
    if not rows:
        raise MeshParseError("empty mesh file", path=path)

    lineno, head = rows[0]
    if len(head) != 4:
        raise MeshParseError("header must be 'd p N_nodes N_elems'", lineno, path)
    try:
        d, p, nn, ne = (int(tok) for tok in head)
    except ValueError:
        raise MeshParseError("header entries must be integers", lineno, path) from None
    if d not in (2, 3) or p not in (1, 2) or nn < 0 or ne < 0:
        raise MeshParseError(f"unsupported header values d={d} p={p}", lineno, path)
    n_loc = math.comb(d + p, p)

    body_rows = rows[1:]
    if len(body_rows) != nn + ne:
        last = body_rows[-1][0] if body_rows else lineno
        raise MeshParseError(
            f"header declares {nn} nodes and {ne} elements but the body has {len(body_rows)} data lines",
            last, path,
        )

    nodes = np.empty((nn, d))
    for i, (ln, toks) in enumerate(body_rows[:nn]):
        if len(toks) != d:
            raise MeshParseError(f"expected {d} coordinates, got {len(toks)}", ln, path)
        try:
            nodes[i] = [float(t) for t in toks]
        except ValueError:
            raise MeshParseError("invalid coordinate", ln, path) from None
    conn = np.empty((ne, n_loc), dtype=np.int64)
    for e, (ln, toks) in enumerate(body_rows[nn:]):
        if len(toks) != n_loc:
            raise MeshParseError(f"expected {n_loc} node indices, got {len(toks)}", ln, path)
        try:
            idx = [int(t) for t in toks]
        except ValueError:
            raise MeshParseError("invalid node index", ln, path) from None
        if min(idx) < 1 or max(idx) > nn:
            raise MeshParseError("node index out of range", ln, path)
        conn[e] = np.array(idx) - 1
    try:
        return Mesh(nodes, conn, p)
    except DomainError as exc:
        raise MeshParseError(str(exc), path=path) from exc

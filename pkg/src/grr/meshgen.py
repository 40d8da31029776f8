"""Small mesh generators for the benchmark domains.

These are deliberately simple: structured triangulations of boxes with
grid-aligned rectangular holes, and a Delaunay triangulation of a box with
circular holes.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import Delaunay

from .errors import DomainError
from .mesh import Mesh


def _orient_ccw(nodes, tris):
    v = nodes[tris]
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    neg = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] < 0
    tris = tris.copy()
    tris[neg, 1], tris[neg, 2] = tris[neg, 2], tris[neg, 1].copy()
    return tris


def _compact(nodes, tris):
    used = np.unique(tris)
    remap = -np.ones(len(nodes), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return nodes[used], remap[tris]


def structured_rectangle(n, lo=(0.0, 0.0), hi=(1.0, 1.0), hole=None, degree=1, ny=None):
    """Right-triangle mesh of a rectangle on an (n x ny) cell grid.

    ``hole`` is an optional ((x0, y0), (x1, y1)) rectangle removed from the
    domain; its sides must coincide with grid lines. Cells are split along
    alternating diagonals so the mesh has no preferred direction.
    """
    ny = n if ny is None else ny
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    xs = np.linspace(lo[0], hi[0], n + 1)
    ys = np.linspace(lo[1], hi[1], ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return i * (ny + 1) + j

    if hole is not None:
        (hx0, hy0), (hx1, hy1) = hole
        for v, grid in ((hx0, xs), (hx1, xs), (hy0, ys), (hy1, ys)):
            if np.min(np.abs(grid - v)) > 1e-12 * (1 + abs(v)):
                raise DomainError("hole sides must lie on grid lines")

    tris = []
    for i in range(n):
        for j in range(ny):
            if hole is not None:
                cx, cy = (xs[i] + xs[i + 1]) / 2, (ys[j] + ys[j + 1]) / 2
                if hx0 < cx < hx1 and hy0 < cy < hy1:
                    continue
            a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    tris = np.array(tris, dtype=np.int64)
    nodes, tris = _compact(nodes, tris)
    mesh = Mesh(nodes, tris, 1)
    return promote_to_p2(mesh) if degree == 2 else mesh


def promote_to_p2(mesh: Mesh) -> Mesh:
    """Add straight-edge midpoints to a degree-1 triangle mesh."""
    if mesh.degree != 1 or mesh.dim != 2:
        raise DomainError("promotion expects a degree-1 triangle mesh")
    tris = mesh.connectivity
    edges = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(3, -1).T
    mids = 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])
    nodes = np.vstack([mesh.nodes, mids])
    conn = np.hstack([tris, mesh.n_nodes + inv])
    return Mesh(nodes, conn, 2)


def circle_holes_mesh(h=0.2, box=((-2.0, -2.0), (2.0, 2.0)), centers=((-1.0, 0.0), (1.0, 0.0)),
                      radius=0.5, n_circle=32):
    """Delaunay triangulation of a box minus circular holes.

    Boundary circles carry ``n_circle`` nodes each; one graded ring of nodes
    surrounds each hole, and the remaining domain is filled with a grid of
    spacing ``h``.
    """
    lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
    centers = np.asarray(centers, float)
    pts = []
    # rings of n_circle nodes with spacing growing with the radius until it reaches h
    rings = [radius]
    while 2 * np.pi * rings[-1] / n_circle < h and rings[-1] < radius + 1.5 * h:
        rings.append(rings[-1] * (1 + 0.9 * 2 * np.pi / n_circle))
    for c in centers:
        for k, rr in enumerate(rings):
            tk = 2 * np.pi * (np.arange(n_circle) + 0.5 * (k % 2)) / n_circle
            pts.append(c + rr * np.column_stack([np.cos(tk), np.sin(tk)]))
    r_keep = rings[-1] + 0.7 * h

    nx = int(round((hi[0] - lo[0]) / h))
    ny = int(round((hi[1] - lo[1]) / h))
    xs = np.linspace(lo[0], hi[0], nx + 1)
    ys = np.linspace(lo[1], hi[1], ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    grid = np.column_stack([X.ravel(), Y.ravel()])
    dist = np.min(np.linalg.norm(grid[:, None, :] - centers[None], axis=2), axis=1)
    pts.append(grid[dist > r_keep])
    nodes = np.vstack(pts)

    tri = Delaunay(nodes)
    tris = tri.simplices.astype(np.int64)
    cent = nodes[tris].mean(axis=1)
    inside = np.any(np.linalg.norm(cent[:, None, :] - centers[None], axis=2) < radius, axis=1)
    tris = _orient_ccw(nodes, tris[~inside])
    # drop zero-area slivers Delaunay may create on exactly collinear box edges
    v = nodes[tris]
    e1, e2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
    area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    tris = tris[area > 1e-12 * h * h]
    nodes, tris = _compact(nodes, tris)
    return Mesh(nodes, tris, 1)


def point_in_mesh(mesh: Mesh, points, tol=1e-12) -> np.ndarray:
    """Boolean mask of points lying in some vertex triangle of the mesh."""
    pts = np.asarray(points, dtype=float)
    v = mesh.nodes[mesh.vertex_connectivity]  # (Ne, 3, 2)
    inside = np.zeros(len(pts), dtype=bool)
    # process in chunks to bound memory
    for start in range(0, len(pts), 2000):
        p = pts[start:start + 2000]
        a = v[None, :, 0, :]
        e1 = v[None, :, 1, :] - a
        e2 = v[None, :, 2, :] - a
        r = p[:, None, :] - a
        det = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
        l1 = (r[..., 0] * e2[..., 1] - r[..., 1] * e2[..., 0]) / det
        l2 = (e1[..., 0] * r[..., 1] - e1[..., 1] * r[..., 0]) / det
        ok = (l1 >= -tol) & (l2 >= -tol) & (l1 + l2 <= 1 + tol)
        inside[start:start + 2000] = ok.any(axis=1)
    return inside


def boundary_nodes(mesh: Mesh) -> np.ndarray:
    """Indices of nodes on boundary edges (edges used by a single triangle)."""
    tris = mesh.vertex_connectivity
    edges = np.sort(np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    bnd = uniq[counts == 1]
    idx = np.unique(bnd)
    if mesh.degree == 2:
        # include midpoints of boundary edges
        conn = mesh.connectivity
        for e_local, (i, j) in enumerate([(0, 1), (1, 2), (2, 0)]):
            pair = np.sort(conn[:, [i, j]], axis=1)
            hit = (pair[:, None, :] == bnd[None]).all(axis=2).any(axis=1)
            idx = np.union1d(idx, conn[hit, 3 + e_local])
    return idx

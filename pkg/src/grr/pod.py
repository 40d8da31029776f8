"""Proper orthogonal decomposition of displacement fields in the H2(box) product."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateInputError
from .mapspace import ComponentRep, MapSpace, h2_inner

log = logging.getLogger(__name__)

CLIP_REL = 1e-14


@dataclass
class PodBasis:
    """POD modes as coefficient vectors of the full space (columns of ``modes``)."""

    space: MapSpace
    modes: np.ndarray  # (M_full, M)
    eigenvalues: np.ndarray  # all retained-nonzero eigenvalues, non-increasing
    tol_pod: float
    all_eigenvalues: np.ndarray | None = None

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]

    def energy_content(self) -> np.ndarray:
        lam = self.eigenvalues
        return np.cumsum(lam) / lam.sum()

    def project(self, a) -> np.ndarray:
        """H2-orthogonal projection coefficients of a full-space field."""
        return self.modes.T @ np.asarray(a, dtype=float)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, modes=self.modes, eigenvalues=self.eigenvalues,
                     tol_pod=np.array(self.tol_pod), checksum=np.array([self.space.checksum]))

    @classmethod
    def load(cls, path, space: MapSpace) -> "PodBasis":
        with np.load(path, allow_pickle=False) as z:
            if str(z["checksum"][0]) != space.checksum:
                raise ConfigurationError(f"POD basis {path} was built on a different space")
            return cls(space, z["modes"], z["eigenvalues"], float(z["tol_pod"]))


def snapshot_gramian(snapshots, space: MapSpace | None = None, method: str = "coefficients"):
    """H2 Gramian of snapshot displacements.

    ``coefficients`` uses the orthonormality of the space's basis (C = U U^T);
    ``quadrature`` evaluates every pairwise product with h2_inner.
    """
    U = np.atleast_2d(np.asarray(snapshots, dtype=float))
    if method == "coefficients":
        C = U @ U.T
    elif method == "quadrature":
        if space is None:
            raise ConfigurationError("quadrature Gramian needs the space")
        n = len(U)
        C = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                C[i, j] = C[j, i] = h2_inner((space, U[i]), (space, U[j]))
    else:
        raise ConfigurationError(f"unknown Gramian method {method!r}")
    asym = np.abs(C - C.T).max() if C.size else 0.0
    if asym > 0:
        log.debug("Gramian asymmetry %.3e", asym)
    return 0.5 * (C + C.T)


def pod_build(snapshots, tol_pod: float = 1e-5, space: MapSpace | None = None,
              gramian: str = "coefficients") -> PodBasis:
    """Build a POD basis from snapshot coefficient vectors (rows).

    M is the smallest m with cumulative energy >= 1 - tol_pod; modes are
    psi_m = sum_i u_i V_im / sqrt(lambda_m).
    """
    if not 0 < tol_pod < 1:
        raise ConfigurationError("tol_pod must lie in (0, 1)")
    U = np.atleast_2d(np.asarray(snapshots, dtype=float))
    if U.shape[0] < 1:
        raise DegenerateInputError("need at least one snapshot")
    C = snapshot_gramian(U, space, gramian)
    lam, V = np.linalg.eigh(C)
    order = np.argsort(lam)[::-1]
    lam, V = lam[order], V[:, order]
    lam = np.clip(lam, 0.0, None)
    if lam[0] <= 0:
        raise DegenerateInputError("all snapshots are zero; POD basis is undefined")
    keep = lam > CLIP_REL * lam[0]
    lam_k, V_k = lam[keep], V[:, keep]
    ec = np.cumsum(lam_k) / lam_k.sum()
    M = int(np.searchsorted(ec, 1.0 - tol_pod - 1e-15) + 1)
    M = min(M, len(lam_k))
    modes = U.T @ V_k[:, :M] / np.sqrt(lam_k[:M])
    return PodBasis(space, modes, lam_k, tol_pod, all_eigenvalues=lam)


def energy_curve(basis: PodBasis):
    """List of (m, 1 - EC_m) over all nonzero eigenvalues."""
    lam = basis.eigenvalues
    res = 1.0 - np.cumsum(lam) / lam.sum()
    res[-1] = 0.0
    res = np.maximum(np.minimum.accumulate(res), 0.0)
    return [(m + 1, float(r)) for m, r in enumerate(res)]


def reduce_space(full: MapSpace, basis: PodBasis) -> MapSpace:
    """Space spanned by the POD modes (identity plus span of modes)."""
    if basis.space is not None and basis.space.checksum != full.checksum:
        raise ConfigurationError("POD basis was built on a different space")
    comps = [ComponentRep(rep.factors, rep.shift, rep.T @ basis.modes) for rep in full.components]
    return MapSpace(full.box, full.n_lp, full.bc, "reduced", full.convention,
                    _components=comps, _parent_checksum=full.checksum)

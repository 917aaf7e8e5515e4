"""Fixed structure matrices for the spatial, temporal and interaction effects.

The spatial graph comes from averaged origin-destination mobility flows:
average the daily matrices, zero the diagonal, row-normalize, average
inward and outward flows, then keep only the top share (default 20%) of the
resulting symmetric weights. The spatial precision is the intrinsic CAR
structure ``D - M``; the temporal one is a first-order random walk; the
interaction precision is their Kronecker product.

Each structure matrix is rescaled so the geometric mean of the marginal
variances of the constrained effect equals 1. Without this, the variance
proportions in the model would confound structure size with signal
strength.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import NumericalError, ValidationError
from .ingest import MobilityStack

# Relative threshold below which an eigenvalue counts as part of the nullspace.
_EIG_TOL = 1e-10


@dataclass
class SpatialStructure:
    """Mobility-graph ICAR structure.

    ``Q_u`` is the (scaled) precision ``scale_factor * (D - M)``. Sum-to-zero
    constraints apply per connected component; ``component_labels`` assigns
    each province to its component.
    """

    M: sp.csr_matrix                 # symmetric weights, zero diagonal
    degrees: np.ndarray              # row sums of M
    Q_u: sp.csc_matrix               # scaled ICAR precision
    n_components: int
    component_labels: np.ndarray
    scale_factor: float
    eigvals: np.ndarray              # eigenvalues of the scaled precision
    eigvecs: np.ndarray
    rank: int
    log_gendet: float                # sum of log positive eigenvalues
    quantile_threshold: float | None = None

    @property
    def n(self) -> int:
        return self.Q_u.shape[0]

    def constraint_matrix(self) -> np.ndarray:
        """Per-component sum-to-zero constraint rows (unit norm)."""
        rows = np.zeros((self.n_components, self.n))
        for k in range(self.n_components):
            members = self.component_labels == k
            rows[k, members] = 1.0 / np.sqrt(members.sum())
        return rows


@dataclass
class TemporalStructure:
    """First-order random-walk structure (scaled), with one sum-to-zero constraint."""

    Q_v: sp.csc_matrix
    scale_factor: float
    eigvals: np.ndarray
    eigvecs: np.ndarray
    rank: int
    log_gendet: float

    @property
    def n(self) -> int:
        return self.Q_v.shape[0]

    def constraint_matrix(self) -> np.ndarray:
        n = self.n
        return np.full((1, n), 1.0 / np.sqrt(n))


@dataclass
class InteractionStructure:
    """Kronecker interaction ``Q_w = Q_u (x) Q_v`` with margin constraints.

    Ordering is province-major: interaction cell (i, j) sits at flat index
    ``i * N_t + j``, matching the response vectorization. The constraint
    matrix pins the spatial margin of every week (per component) and the
    temporal margin of every province, dropping one redundant province row
    per component.
    """

    Q_w: sp.csc_matrix
    constraints: sp.csr_matrix
    n_s: int
    n_t: int
    rank: int
    log_gendet: float


def scale_structure(Q, nullspace_dim: int) -> tuple[np.ndarray, float]:
    """Rescale a PSD structure matrix to unit typical marginal variance.

    Returns ``(Q * c, c)`` where ``c`` is the geometric mean of the diagonal
    of the constrained generalized inverse of ``Q`` (its pseudo-inverse, the
    covariance of the effect under sum-to-zero-per-component constraints).
    Isolated nodes have zero marginal variance and are excluded from the
    mean. Re-applying to an already scaled matrix yields a factor of 1.
    """
    Qd = np.asarray(Q.todense()) if sp.issparse(Q) else np.asarray(Q, dtype=float)
    eigvals, eigvecs = np.linalg.eigh(Qd)
    tol = max(abs(eigvals[0]), abs(eigvals[-1])) * _EIG_TOL
    null = eigvals < tol
    if null.sum() != nullspace_dim:
        raise NumericalError(
            f"structure matrix numerically singular beyond its nullspace: "
            f"{null.sum()} near-zero eigenvalues, expected {nullspace_dim}"
        )
    pos = ~null
    diag_cov = (eigvecs[:, pos] ** 2 / eigvals[pos]).sum(axis=1)
    positive = diag_cov > diag_cov.max() * 1e-8
    if not positive.any():
        raise NumericalError("no positive marginal variances to scale against")
    factor = float(np.exp(np.mean(np.log(diag_cov[positive]))))
    return Qd * factor, factor


def _finalize_spatial(M: np.ndarray, scale: bool, threshold: float | None) -> SpatialStructure:
    M = np.asarray(M, dtype=float)
    if M.shape[0] != M.shape[1]:
        raise ValidationError("weight matrix must be square")
    if np.abs(M - M.T).max() > 1e-12:
        raise ValidationError("weight matrix must be symmetric (tolerance 1e-12)")
    if np.any(np.diag(M) != 0):
        raise ValidationError("weight matrix must have a zero diagonal")
    if np.any(M < 0):
        raise ValidationError("weights must be non-negative")
    degrees = M.sum(axis=1)
    Q_raw = np.diag(degrees) - M
    n_comp, labels = connected_components(sp.csr_matrix(M > 0), directed=False)
    if scale:
        Q_scaled, factor = scale_structure(Q_raw, nullspace_dim=n_comp)
    else:
        Q_scaled, factor = Q_raw, 1.0
    eigvals, eigvecs = np.linalg.eigh(Q_scaled)
    tol = max(abs(eigvals).max(), 1.0) * _EIG_TOL
    pos = eigvals > tol
    return SpatialStructure(
        M=sp.csr_matrix(M),
        degrees=degrees,
        Q_u=sp.csc_matrix(Q_scaled),
        n_components=n_comp,
        component_labels=labels,
        scale_factor=factor,
        eigvals=eigvals,
        eigvecs=eigvecs,
        rank=int(pos.sum()),
        log_gendet=float(np.log(eigvals[pos]).sum()),
        quantile_threshold=threshold,
    )


def spatial_structure_from_weights(M, scale: bool = True) -> SpatialStructure:
    """Build the ICAR structure from an already symmetric weight matrix."""
    return _finalize_spatial(np.asarray(M, dtype=float), scale, threshold=None)


def build_mobility_weights(
    stack: MobilityStack, quantile_keep: float = 0.2, scale: bool = True
) -> SpatialStructure:
    """Averaged mobility flows -> sparse symmetric weights -> ICAR structure.

    Pipeline: (1) average the daily matrices; (2) zero the diagonal;
    (3) row-normalize, rows with zero sum staying zero; (4) symmetrize by
    averaging inward and outward flow; (5) keep entries at or above the
    ``1 - quantile_keep`` quantile of the positive weights (ties at the
    threshold are all kept), zeroing the rest. Thresholding acts on
    symmetric weights, so symmetry is preserved. The component count is
    recomputed after thresholding so a disconnected graph is never silent.
    """
    if not (0.0 < quantile_keep < 1.0):
        raise ValidationError(f"quantile_keep must lie in (0, 1), got {quantile_keep}")
    avg = stack.flows.mean(axis=0)
    np.fill_diagonal(avg, 0.0)
    if not avg.any():
        raise ValidationError("empty mobility graph: averaged flows are all zero")
    row_sums = avg.sum(axis=1)
    normed = np.divide(avg, row_sums[:, None], out=np.zeros_like(avg), where=row_sums[:, None] > 0)
    sym = (normed + normed.T) / 2.0
    iu = np.triu_indices_from(sym, k=1)
    weights = sym[iu]
    positive = weights[weights > 0]
    threshold = float(np.quantile(positive, 1.0 - quantile_keep))
    M = np.where(sym >= threshold, sym, 0.0)
    np.fill_diagonal(M, 0.0)
    return _finalize_spatial(M, scale, threshold)


def rw1_structure(n: int, scale: bool = True) -> TemporalStructure:
    """First-order random-walk structure matrix of size ``n`` (>= 2)."""
    if n < 2:
        raise ValidationError(f"RW1 needs at least 2 time points, got {n}")
    Q = sp.diags(
        [np.full(n - 1, -1.0), np.r_[1.0, np.full(n - 2, 2.0), 1.0], np.full(n - 1, -1.0)],
        offsets=[-1, 0, 1],
        format="csc",
    )
    if scale:
        Q_scaled, factor = scale_structure(Q, nullspace_dim=1)
    else:
        Q_scaled, factor = np.asarray(Q.todense()), 1.0
    eigvals, eigvecs = np.linalg.eigh(Q_scaled)
    tol = max(abs(eigvals).max(), 1.0) * _EIG_TOL
    pos = eigvals > tol
    return TemporalStructure(
        Q_v=sp.csc_matrix(Q_scaled),
        scale_factor=factor,
        eigvals=eigvals,
        eigvecs=eigvecs,
        rank=int(pos.sum()),
        log_gendet=float(np.log(eigvals[pos]).sum()),
    )


def interaction_structure(s: SpatialStructure, t: TemporalStructure) -> InteractionStructure:
    """Kronecker interaction precision plus its sum-to-zero constraint rows."""
    n_s, n_t = s.n, t.n
    Q_w = sp.kron(s.Q_u, t.Q_v, format="csc")

    rows, cols, vals = [], [], []
    r = 0
    # spatial margin per component and week: sum_i w[i, j] = 0
    for k in range(s.n_components):
        members = np.nonzero(s.component_labels == k)[0]
        weight = 1.0 / np.sqrt(len(members))
        for j in range(n_t):
            for i in members:
                rows.append(r)
                cols.append(i * n_t + j)
                vals.append(weight)
            r += 1
    # temporal margin per province: sum_j w[i, j] = 0; one redundant row per
    # component (its first province) is dropped
    first_of_component = {}
    for i in range(n_s):
        first_of_component.setdefault(int(s.component_labels[i]), i)
    skip = set(first_of_component.values())
    for i in range(n_s):
        if i in skip:
            continue
        for j in range(n_t):
            rows.append(r)
            cols.append(i * n_t + j)
            vals.append(1.0 / np.sqrt(n_t))
        r += 1
    A = sp.csr_matrix((vals, (rows, cols)), shape=(r, n_s * n_t))

    rank = s.rank * t.rank
    log_gendet = t.rank * s.log_gendet + s.rank * t.log_gendet
    return InteractionStructure(
        Q_w=Q_w, constraints=A, n_s=n_s, n_t=n_t, rank=rank, log_gendet=log_gendet
    )


def write_weights_csv(structure: SpatialStructure, provinces, path) -> None:
    """Persist all nonzero directed weight entries (symmetric pairs included)."""
    import pandas as pd

    M = structure.M.tocoo()
    rows = sorted(zip(M.row.tolist(), M.col.tolist(), M.data.tolist()))
    pd.DataFrame(
        [(provinces.ids[p], provinces.ids[q], v) for p, q, v in rows],
        columns=["origin_id", "destination_id", "weight"],
    ).to_csv(path, index=False)


def load_weights_csv(path, provinces, scale: bool = True) -> SpatialStructure:
    """Rebuild the spatial structure from a weights CSV.

    Entries may list one or both directions; when both are present they must
    agree. Provinces absent from the file are isolated nodes.
    """
    import pandas as pd
    from pathlib import Path

    path = Path(path)
    if not path.exists():
        raise ValidationError(f"input file not found: {path}")
    df = pd.read_csv(path)
    for c in ("origin_id", "destination_id", "weight"):
        if c not in df.columns:
            raise ValidationError(f"{path}: missing column {c}")
    n = len(provinces)
    M = np.zeros((n, n))
    filled = np.zeros((n, n), dtype=bool)
    for row in df.itertuples(index=False):
        p = provinces.position(str(row.origin_id))
        q = provinces.position(str(row.destination_id))
        v = float(row.weight)
        if p == q:
            raise ValidationError(f"{path}: self-weight for {row.origin_id}")
        if v < 0:
            raise ValidationError(f"{path}: negative weight")
        if filled[p, q] and M[p, q] != v:
            raise ValidationError(f"{path}: conflicting duplicate weight for ({p}, {q})")
        if filled[q, p] and M[q, p] != v:
            raise ValidationError(
                f"{path}: asymmetric weights for ({row.origin_id}, {row.destination_id})"
            )
        M[p, q] = M[q, p] = v
        filled[p, q] = True
    return spatial_structure_from_weights(M, scale=scale)


@dataclass
class ModelStructures:
    """Bundle of the three scaled structures plus flat constraint matrices."""

    spatial: SpatialStructure
    temporal: TemporalStructure
    interaction: InteractionStructure

    @property
    def n_s(self) -> int:
        return self.spatial.n

    @property
    def n_t(self) -> int:
        return self.temporal.n

    def constraint_violation(self, u, v, w) -> float:
        """Largest absolute residual of any sum-to-zero constraint."""
        res_u = self.spatial.constraint_matrix() @ u
        res_v = self.temporal.constraint_matrix() @ v
        res_w = self.interaction.constraints @ w
        return float(
            max(np.abs(res_u).max(), np.abs(res_v).max(), np.abs(res_w).max())
        )


def model_structures(spatial: SpatialStructure, temporal: TemporalStructure) -> ModelStructures:
    return ModelStructures(spatial, temporal, interaction_structure(spatial, temporal))

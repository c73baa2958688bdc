"""Truncated coordinate model of a coupled system and its eigenstructure.

The state space is X = Y x Z.  Both components carry orthonormal reference
bases that diagonalise the diagonal blocks, so in coordinates

    A = [[diag(mu), C], [0, diag(nu)]],    b = (b_y, b_z).

Eigenvectors of A and of its adjoint are then explicit:

* a Y mode j has primal vector (e_j, 0) and dual vector (e_j, psi_z[j]);
* a Z mode k has primal vector (phi_y[k], e_k) and dual vector (0, e_k).

When mu_p and nu_q coincide (a matched pair) the Z mode q becomes a
generalised eigenvector with (A - lambda) phi_2 = c phi_1, and the same
layout holds with the two free coordinates fixed by a normalisation choice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AmbiguousOverlap,
    DimensionMismatch,
    DuplicateEigenvalueWithinBranch,
    NearResonance,
    NonPositiveHorizon,
)

DUPLICATE_REL_TOL = 1e-12
OVERLAP_REL_TOL = 1e-9
RESONANCE_REL_GUARD = 1e-6

__all__ = [
    "BranchSpectrum",
    "CoupledModel",
    "SpectrumPartition",
    "EigenSystem",
    "BCoefficients",
    "build_coupled_model",
    "classify_spectra",
    "eigenstructure",
    "eigenstructure_disjoint",
    "eigenstructure_overlap",
    "b_coefficients",
    "biorthogonality_check",
    "eigen_residual",
    "merged_modes",
]


@dataclass(frozen=True)
class BranchSpectrum:
    """Eigenvalues of one diagonal block with opaque mode labels."""

    eigenvalues: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.eigenvalues, dtype=float).reshape(-1)
        labels = tuple(str(s) for s in self.labels)
        if len(labels) != len(values):
            raise DimensionMismatch(f"{len(labels)} labels for {len(values)} eigenvalues")
        if not np.all(np.isfinite(values)):
            raise ValueError("eigenvalues must be finite real numbers")
        values.setflags(write=False)
        object.__setattr__(self, "eigenvalues", values)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_values(cls, values, prefix: str) -> BranchSpectrum:
        values = np.asarray(values, dtype=float).reshape(-1)
        return cls(values, tuple(f"{prefix}{i + 1}" for i in range(len(values))))

    def __len__(self) -> int:
        return len(self.eigenvalues)


@dataclass(frozen=True)
class CoupledModel:
    """Validated finite coordinate model; build it with :func:`build_coupled_model`."""

    spec_y: BranchSpectrum
    spec_z: BranchSpectrum
    coupling: np.ndarray
    b_y: np.ndarray
    b_z: np.ndarray
    t1: float

    @property
    def ny(self) -> int:
        return len(self.spec_y)

    @property
    def nz(self) -> int:
        return len(self.spec_z)

    @property
    def mu(self) -> np.ndarray:
        return self.spec_y.eigenvalues

    @property
    def nu(self) -> np.ndarray:
        return self.spec_z.eigenvalues

    @property
    def scale(self) -> float:
        """max |lambda| over both branches, or 1 for an all-zero spectrum."""
        values = np.concatenate([self.mu, self.nu])
        top = float(np.max(np.abs(values))) if len(values) else 0.0
        return top if top > 0 else 1.0

    def operator_matrix(self) -> np.ndarray:
        """Dense coordinate matrix of A (Y block first)."""
        ny, nz = self.ny, self.nz
        a = np.zeros((ny + nz, ny + nz))
        a[:ny, :ny] = np.diag(self.mu)
        a[:ny, ny:] = self.coupling
        a[ny:, ny:] = np.diag(self.nu)
        return a


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def _as_branch(spec, prefix) -> BranchSpectrum:
    return spec if isinstance(spec, BranchSpectrum) else BranchSpectrum.from_values(spec, prefix)


def build_coupled_model(spec_y, spec_z, coupling, b_y, b_z, t1, duplicate_tol=None) -> CoupledModel:
    """Validate the coordinate data and return a :class:`CoupledModel`.

    ``spec_y`` and ``spec_z`` may be :class:`BranchSpectrum` instances or
    plain sequences of eigenvalues.  ``duplicate_tol`` defaults to
    ``1e-12 * max|lambda|``.
    """
    spec_y = _as_branch(spec_y, "y")
    spec_z = _as_branch(spec_z, "z")
    ny, nz = len(spec_y), len(spec_z)
    coupling = np.asarray(coupling, dtype=float)
    if coupling.size == 0:
        coupling = coupling.reshape(ny, nz)
    if coupling.shape != (ny, nz):
        raise DimensionMismatch(f"coupling has shape {coupling.shape}, expected ({ny}, {nz})")
    b_y = np.asarray(b_y, dtype=float).reshape(-1)
    b_z = np.asarray(b_z, dtype=float).reshape(-1)
    if len(b_y) != ny:
        raise DimensionMismatch(f"b_y has length {len(b_y)}, expected {ny}")
    if len(b_z) != nz:
        raise DimensionMismatch(f"b_z has length {len(b_z)}, expected {nz}")
    if not (np.all(np.isfinite(coupling)) and np.all(np.isfinite(b_y)) and np.all(np.isfinite(b_z))):
        raise ValueError("coupling and control coordinates must be finite")
    t1 = float(t1)
    if not t1 > 0 or not np.isfinite(t1):
        raise NonPositiveHorizon(f"t1 must be positive and finite, got {t1}")
    model = CoupledModel(spec_y, spec_z, _frozen(coupling), _frozen(b_y), _frozen(b_z), t1)
    tol = DUPLICATE_REL_TOL * model.scale if duplicate_tol is None else float(duplicate_tol)
    for name, spec in (("Y", spec_y), ("Z", spec_z)):
        vals = spec.eigenvalues
        if len(vals) < 2:
            continue
        order = np.argsort(vals)
        gaps = np.diff(vals[order])
        bad = np.nonzero(gaps <= tol)[0]
        if len(bad):
            i, j = order[bad[0]], order[bad[0] + 1]
            raise DuplicateEigenvalueWithinBranch(
                f"{name} branch modes {spec.labels[i]} and {spec.labels[j]} share eigenvalue "
                f"{vals[i]!r} within duplicate_tol={tol:g}"
            )
    return model


@dataclass(frozen=True)
class SpectrumPartition:
    """Assignment of every mode to I_Y only, I_Z only, or a matched pair.

    Indices refer to each branch's own ordering; ``i_yz`` holds
    ``(y_index, z_index)`` pairs.
    """

    i_y: tuple[int, ...]
    i_z: tuple[int, ...]
    i_yz: tuple[tuple[int, int], ...]
    overlap_tol: float

    @property
    def is_disjoint(self) -> bool:
        return not self.i_yz


def classify_spectra(model: CoupledModel, overlap_tol=None) -> SpectrumPartition:
    """Match Y and Z eigenvalues closer than ``overlap_tol`` into pairs.

    Each eigenvalue may have at most one partner within the tolerance;
    otherwise :class:`AmbiguousOverlap` is raised.  ``overlap_tol`` defaults
    to ``1e-9 * max|lambda|``.
    """
    tol = OVERLAP_REL_TOL * model.scale if overlap_tol is None else float(overlap_tol)
    mu, nu = model.mu, model.nu
    close = np.abs(mu[:, None] - nu[None, :]) <= tol if len(mu) and len(nu) else np.zeros((len(mu), len(nu)), bool)
    for j in np.nonzero(close.sum(axis=1) > 1)[0]:
        partners = [model.spec_z.labels[k] for k in np.nonzero(close[j])[0]]
        raise AmbiguousOverlap(f"Y mode {model.spec_y.labels[j]} is within {tol:g} of Z modes {partners}")
    for k in np.nonzero(close.sum(axis=0) > 1)[0]:
        partners = [model.spec_y.labels[j] for j in np.nonzero(close[:, k])[0]]
        raise AmbiguousOverlap(f"Z mode {model.spec_z.labels[k]} is within {tol:g} of Y modes {partners}")
    pairs = tuple((int(j), int(k)) for j, k in zip(*np.nonzero(close)))
    paired_y = {p for p, _ in pairs}
    paired_z = {q for _, q in pairs}
    i_y = tuple(j for j in range(model.ny) if j not in paired_y)
    i_z = tuple(k for k in range(model.nz) if k not in paired_z)
    return SpectrumPartition(i_y, i_z, pairs, tol)


@dataclass(frozen=True)
class EigenSystem:
    """Coordinates of the biorthogonal eigen-system of A and A*.

    Attributes
    ----------
    lambda_y, lambda_z : ndarray
        Eigenvalues attached to Y- and Z-indexed modes.  For a matched pair
        the Z entry is snapped to its Y partner.
    psi_z : ndarray, shape (ny, nz)
        Row j is the Z part of the dual vector of Y mode j (psi_1 for pairs).
    phi_y : ndarray, shape (nz, ny)
        Row k is the Y part of the primal vector of Z mode k (phi_2 for pairs).
    pairs : tuple of (int, int)
        Matched (y_index, z_index) pairs.
    c : ndarray
        Coupling scalar c_m of each pair.
    free_value : float
        Value s placed at the free coordinates: psi_1Z[q] = s, phi_2Y[p] = -s.
    multiplicity_two : tuple of int
        Positions in ``pairs`` whose c_m vanishes (genuine second eigenvector).
    biorth_error : float
        Maximum deviation of (phi_i, psi_j) from delta_ij.
    """

    lambda_y: np.ndarray
    lambda_z: np.ndarray
    psi_z: np.ndarray
    phi_y: np.ndarray
    pairs: tuple[tuple[int, int], ...] = ()
    c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    free_value: float = 1.0
    multiplicity_two: tuple[int, ...] = ()
    biorth_error: float = 0.0

    @property
    def ny(self) -> int:
        return len(self.lambda_y)

    @property
    def nz(self) -> int:
        return len(self.lambda_z)

    @property
    def pair_of_y(self) -> dict[int, int]:
        """Map Y index to its position in ``pairs``."""
        return {p: m for m, (p, _) in enumerate(self.pairs)}

    @property
    def pair_of_z(self) -> dict[int, int]:
        return {q: m for m, (_, q) in enumerate(self.pairs)}

    def c_of_y(self) -> np.ndarray:
        """c_m broadcast to Y modes (zero for unpaired modes)."""
        out = np.zeros(self.ny)
        for m, (p, _) in enumerate(self.pairs):
            out[p] = self.c[m]
        return out

    def primal_matrix(self) -> np.ndarray:
        """Columns are phi_i: Y modes first, then Z modes."""
        ny, nz = self.ny, self.nz
        phi = np.eye(ny + nz)
        phi[:ny, ny:] = self.phi_y.T
        return phi

    def dual_matrix(self) -> np.ndarray:
        """Columns are psi_i in the same order as :meth:`primal_matrix`."""
        ny, nz = self.ny, self.nz
        psi = np.eye(ny + nz)
        psi[ny:, :ny] = self.psi_z.T
        return psi

    def jordan_matrix(self) -> np.ndarray:
        """Matrix J with A Phi = Phi J (diagonal plus c_m couplings)."""
        ny = self.ny
        jm = np.diag(np.concatenate([self.lambda_y, self.lambda_z]))
        for m, (p, q) in enumerate(self.pairs):
            jm[p, ny + q] = self.c[m]
        return jm

    def generalized(self, m: int) -> tuple[float, np.ndarray, np.ndarray]:
        """(c_m, phi_2Y coordinates, psi_1Z coordinates) of pair ``m``."""
        p, q = self.pairs[m]
        return float(self.c[m]), self.phi_y[q].copy(), self.psi_z[p].copy()


def _resolvent_coordinates(model, lam_z, pair_mask, guard):
    """phi_y = C / (nu - mu) and psi_z = C / (mu - nu) off the matched pairs."""
    diff = lam_z[None, :] - model.mu[:, None]
    coupled = model.coupling != 0
    near = (np.abs(diff) < guard) & coupled & ~pair_mask
    if np.any(near):
        j, k = (int(v) for v in np.argwhere(near)[0])
        raise NearResonance(
            f"|nu_{model.spec_z.labels[k]} - mu_{model.spec_y.labels[j]}| = {abs(diff[j, k]):.3g} "
            f"is below resonance_guard={guard:g}; match the pair or raise the guard"
        )
    safe = np.where(coupled & ~pair_mask, diff, 1.0)
    ratio = np.where(coupled & ~pair_mask, model.coupling / safe, 0.0)
    return ratio.T.copy(), -ratio


def eigenstructure_disjoint(model: CoupledModel, partition: SpectrumPartition,
                            resonance_guard=None) -> EigenSystem:
    """Eigen-system when no Y eigenvalue coincides with a Z eigenvalue."""
    if partition.i_yz:
        raise ValueError("partition contains matched pairs; use eigenstructure_overlap")
    return eigenstructure_overlap(model, partition, resonance_guard=resonance_guard)


def eigenstructure_overlap(model: CoupledModel, partition: SpectrumPartition,
                           resonance_guard=None, free_value: float = 1.0) -> EigenSystem:
    """Eigen-system including length-2 Jordan chains on matched pairs.

    For a pair (p, q) with common eigenvalue lambda the generalised primal
    vector is phi_2 = (phi_2Y, e_q) with phi_2Y[j] = C[j, q] / (lambda - mu_j)
    for j != p, and the dual psi_1 = (e_p, psi_1Z) with
    psi_1Z[k] = C[p, k] / (lambda - nu_k) for k != q.  Biorthogonality leaves
    one relation psi_1Z[q] + phi_2Y[p] = 0; we set psi_1Z[q] = free_value.
    """
    guard = RESONANCE_REL_GUARD * model.scale if resonance_guard is None else float(resonance_guard)
    lam_y = model.mu.copy()
    lam_z = model.nu.copy()
    pair_mask = np.zeros((model.ny, model.nz), dtype=bool)
    for p, q in partition.i_yz:
        lam_z[q] = lam_y[p]
        pair_mask[p, q] = True
    phi_y, psi_z = _resolvent_coordinates(model, lam_z, pair_mask, guard)
    c = np.zeros(len(partition.i_yz))
    for m, (p, q) in enumerate(partition.i_yz):
        c[m] = model.coupling[p, q]
        phi_y[q, p] = -free_value
        psi_z[p, q] = free_value
    mult2 = tuple(m for m in range(len(c)) if c[m] == 0)
    for arr in (lam_y, lam_z, phi_y, psi_z, c):
        arr.setflags(write=False)
    eig = EigenSystem(lam_y, lam_z, psi_z, phi_y, tuple(partition.i_yz), c, float(free_value), mult2)
    object.__setattr__(eig, "biorth_error", biorthogonality_check(eig))
    return eig


def eigenstructure(model: CoupledModel, partition: SpectrumPartition, **kwargs) -> EigenSystem:
    """Dispatch to the disjoint or overlapping construction."""
    if partition.is_disjoint:
        kwargs.pop("free_value", None)
        return eigenstructure_disjoint(model, partition, **kwargs)
    return eigenstructure_overlap(model, partition, **kwargs)


def biorthogonality_check(eig: EigenSystem) -> float:
    """Max |(phi_i, psi_j) - delta_ij| over all modes.

    The Y/Z cross block of this matrix is exactly phi_y.T + psi_z, so a zero
    result also certifies (phi_Yk, psi_Yj) = -(phi_Zk, psi_Zj).
    """
    gram = eig.dual_matrix().T @ eig.primal_matrix()
    return float(np.max(np.abs(gram - np.eye(gram.shape[0])))) if gram.size else 0.0


def eigen_residual(model: CoupledModel, eig: EigenSystem) -> float:
    """Max entry of A Phi - Phi J; zero up to rounding for a valid system."""
    phi = eig.primal_matrix()
    res = model.operator_matrix() @ phi - phi @ eig.jordan_matrix()
    return float(np.max(np.abs(res))) if res.size else 0.0


@dataclass(frozen=True)
class BCoefficients:
    """Control coefficients b_i = (b, psi_i) split by branch.

    ``y[j]`` is b_j (b_1j for a paired mode) and ``z[k]`` is b_k
    (b_2j for the Z partner of a pair).
    """

    y: np.ndarray
    z: np.ndarray


def b_coefficients(model: CoupledModel, eig: EigenSystem) -> BCoefficients:
    """(b, psi_i) for every mode, evaluated in coordinates."""
    by = model.b_y + eig.psi_z @ model.b_z
    bz = model.b_z.copy()
    return BCoefficients(_frozen(by), _frozen(bz))


@dataclass(frozen=True)
class Mode:
    """One entry of the merged spectrum listing."""

    branch: str
    index: int
    label: str
    eigenvalue: float


def merged_modes(model: CoupledModel) -> list[Mode]:
    """All modes sorted by decreasing eigenvalue, Y before Z on ties."""
    modes = [Mode("y", j, model.spec_y.labels[j], float(v)) for j, v in enumerate(model.mu)]
    modes += [Mode("z", k, model.spec_z.labels[k], float(v)) for k, v in enumerate(model.nu)]
    return sorted(modes, key=lambda m: (-m.eigenvalue, m.branch, m.index))

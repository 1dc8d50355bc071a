"""Reduced data, the least-squares misfit and variable projection.

For candidate positions z_m and real intensities v_m the misfit is

    phi = sum_j | f_j - sum_m G_j(z_m) v_m |^2,   f_j = (u_j - g_j) / k^2,

where G_j(z) = g(x_j, z) g(y_j, z).  Intensities enter linearly, so for fixed
positions the optimal real intensities solve a 2J x M real least-squares
problem built from the stacked real and imaginary parts.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, Tuple

import numpy as np

from .errors import InvariantError, UnderdeterminedError
from .model import (
    Dataset,
    MeasurementPair,
    PairGeometry,
    as_point,
    green,
    kernel_matrix,
    kernel_matrix_and_gradient,
)

#: relative singular-value cutoff for the projected intensities
PROJECTION_RCOND = 1e-10


@dataclass(frozen=True, eq=False)
class ReducedData:
    k: float
    pairs: Tuple[MeasurementPair, ...]
    f: np.ndarray

    def __post_init__(self):
        f = np.array(self.f, dtype=complex).reshape(-1)
        f.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if len(f) != len(self.pairs):
            raise InvariantError(f"{len(self.pairs)} pairs but {len(f)} reduced values")

    @property
    def J(self) -> int:
        return len(self.f)

    @cached_property
    def geometry(self) -> PairGeometry:
        return PairGeometry(self.pairs)

    @cached_property
    def norm2(self) -> float:
        """sum_j |f_j|^2, the misfit of the empty model."""
        return float(np.sum(np.abs(self.f) ** 2))

    @cached_property
    def f_grid(self) -> np.ndarray:
        """Reduced data scattered onto the receiver x source grid."""
        rec, src, _, ri, si = self.geometry.split
        F = np.zeros((len(rec), len(src)), dtype=complex)
        np.add.at(F, (ri, si), self.f)
        return F

    @cached_property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.f.real, self.f.imag])


@dataclass(frozen=True, eq=False)
class CandidateParams:
    """Positions ``(M, 3)`` and real intensities ``(M,)`` of a candidate model."""

    positions: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        z = np.array(self.positions, dtype=float).reshape(-1, 3)
        v = np.array(self.intensities, dtype=float).reshape(-1)
        if len(z) != len(v) or len(z) < 1:
            raise InvariantError(
                f"need matching, non-empty positions and intensities, got {len(z)} and {len(v)}"
            )
        for i, p in enumerate(z):
            as_point(p, f"positions[{i}]")
            if not p[2] < 0:
                raise InvariantError(f"positions[{i}] = {tuple(p)} is not below the surface")
        if not np.all(np.isfinite(v)):
            raise InvariantError("non-finite intensity")
        z.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "positions", z)
        object.__setattr__(self, "intensities", v)

    @property
    def M(self) -> int:
        return len(self.intensities)

    def as_vector(self) -> np.ndarray:
        """Flat layout (z_1, ..., z_M, v_1, ..., v_M) of length 4M."""
        return np.concatenate([self.positions.ravel(), self.intensities])

    @classmethod
    def from_vector(cls, x) -> "CandidateParams":
        x = np.asarray(x, dtype=float)
        M = len(x) // 4
        return cls(x[: 3 * M].reshape(M, 3), x[3 * M :])


def reduce(data: Dataset) -> ReducedData:
    """Scattered part of the data divided by k^2."""
    geom = data.geometry
    f = (data.fields - geom.direct(data.k)) / data.k**2
    red = ReducedData(k=data.k, pairs=data.pairs, f=f)
    object.__setattr__(red, "geometry", geom)
    return red


def residual(params: CandidateParams, reduced: ReducedData) -> np.ndarray:
    """Complex residual f_j - sum_m G_j(z_m) v_m."""
    K = kernel_matrix(reduced.geometry, params.positions, reduced.k)
    return reduced.f - K @ params.intensities


def phi(params: CandidateParams, reduced: ReducedData) -> float:
    r = residual(params, reduced)
    return float(np.sum(r.real**2 + r.imag**2))


def phi_gradient(params: CandidateParams, reduced: ReducedData) -> np.ndarray:
    """Gradient of :func:`phi` in the layout of :meth:`CandidateParams.as_vector`."""
    K, dK = kernel_matrix_and_gradient(reduced.geometry, params.positions, reduced.k)
    v = params.intensities
    r = reduced.f - K @ v
    # d|r|^2 = 2 Re(conj(r) dr), dr = -dK v
    grad_v = -2.0 * np.real(K.conj().T @ r)
    grad_z = -2.0 * v[:, None] * np.real(np.einsum("j,jmc->mc", r.conj(), dK))
    return np.concatenate([grad_z.ravel(), grad_v])


def _stack(K):
    # complex (..., J, M) -> real (..., 2J, M)
    return np.concatenate([K.real, K.imag], axis=-2)


def project_batch(positions, reduced: ReducedData):
    """Optimal intensities and misfit for a batch of position sets.

    ``positions`` has shape ``(P, M, 3)``; returns ``(P, M)`` intensities and
    ``(P,)`` misfits.  Each batch entry is solved independently, so results
    do not depend on how candidates are grouped.
    """
    positions = np.asarray(positions, dtype=float)
    A = _stack(kernel_matrix(reduced.geometry, positions, reduced.k))
    b = reduced.stacked
    v = np.einsum("pmj,j->pm", np.linalg.pinv(A, rcond=PROJECTION_RCOND), b)
    r = b - np.einsum("pjm,pm->pj", A, v)
    return v, np.einsum("pj,pj->p", r, r)


def screen_batch(positions, reduced: ReducedData, chunk=64):
    """Approximate projected misfit for many position sets at once.

    Works on the M x M normal equations with a Jacobi-scaled, eigenvalue
    truncated Gram matrix instead of an SVD of the 2J x M system.  The Gram
    matrix and right-hand side are assembled per distinct receiver and
    source point through the pair-count matrix, so the cost does not grow
    with J for grid layouts.  Accuracy is limited to about 1e-15 of
    sum |f|^2; the result only ranks candidates in the global search and
    reported values always go through :func:`project_intensities`.
    """
    positions = np.asarray(positions, dtype=float)
    P, M = positions.shape[:2]
    rec, src, W, _, _ = reduced.geometry.split
    F = reduced.f_grid
    out = np.empty(P)
    for lo in range(0, P, chunk):
        z = positions[lo : lo + chunk]
        a = green(rec[:, None, :], z[:, None, :, :], reduced.k)  # (p, R, M)
        b = green(src[:, None, :], z[:, None, :, :], reduced.k)  # (p, S, M)
        p = len(z)
        bb = b.conj()[..., :, None] * b[..., None, :]  # (p, S, M, M)
        T = (W @ bb.transpose(1, 0, 2, 3).reshape(len(src), -1)).reshape(len(rec), p, M, M)
        aa = a.conj()[..., :, None] * a[..., None, :]  # (p, R, M, M)
        G = np.einsum("prmn,rpmn->pmn", aa, T).real
        rhs = np.sum(a.conj() * (F @ b.conj()), axis=1).real
        s = 1.0 / np.sqrt(np.maximum(np.einsum("pmm->pm", G), np.finfo(float).tiny))
        lam, V = np.linalg.eigh(G * s[:, :, None] * s[:, None, :])
        keep = lam > 1e-13 * lam[:, -1:]
        inv = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
        # at the least-squares solution v.G.v == v.rhs
        y = np.einsum("pmk,pk,pnk,pn->pm", V, inv, V, rhs * s)
        out[lo : lo + chunk] = np.maximum(reduced.norm2 - np.einsum("pm,pm->p", y, rhs * s), 0.0)
    return out


def project_intensities(positions: Sequence, reduced: ReducedData):
    """Real intensities minimizing the misfit at fixed positions.

    Minimum-norm least-squares solution; singular values below
    ``PROJECTION_RCOND`` times the largest one are discarded.  Returns
    ``(intensities, misfit)``.
    """
    z = np.asarray(positions, dtype=float).reshape(-1, 3)
    if reduced.J < len(z):
        raise UnderdeterminedError(f"J={reduced.J} pairs cannot determine M={len(z)} intensities")
    v, _ = project_batch(z[None], reduced)
    v = v[0]
    return v, phi(CandidateParams(z, v), reduced)

"""Physical model: domain types, the free-space Helmholtz kernel and the
synthetic forward generators.

Lengths are measured in units of the nominal scatterer depth, fields carry
units of 1/length, intensities units of length**3.  Sources and receivers
live on the surface plane x3 = 0, scatterers strictly below it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence, Tuple, Union

import numpy as np

from .errors import (
    CoincidentPointsError,
    InvariantError,
    SingularSystemError,
    ZeroRadiusError,
)

MAX_SCATTERERS = 15
FOLDY_COND_LIMIT = 1e12
PROVENANCES = ("point-born", "volume-born", "foldy", "external")

Point3 = Tuple[float, float, float]


def as_point(p, name="point") -> Point3:
    """Coerce a 3-sequence to a tuple of finite floats."""
    try:
        vals = tuple(float(c) for c in p)
    except (TypeError, ValueError):
        raise InvariantError(f"{name}: expected 3 real numbers, got {p!r}") from None
    if len(vals) != 3:
        raise InvariantError(f"{name}: expected 3 components, got {len(vals)}")
    if not all(math.isfinite(c) for c in vals):
        raise InvariantError(f"{name}: non-finite component in {vals}")
    return vals


@dataclass(frozen=True)
class Scatterer:
    """One small inhomogeneity: a ball of radius ``radius`` around ``center``.

    ``intensity`` is the integral of the velocity perturbation over the ball.
    ``radius == 0`` is the delta-type limit, where ``intensity`` plays the
    role of the fixed strength V.
    """

    center: Point3
    radius: float = 0.0
    intensity: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center, "center"))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "intensity", float(self.intensity))
        if not self.center[2] < 0:
            raise InvariantError(f"center {self.center} is not below the surface x3=0")
        if not (math.isfinite(self.radius) and self.radius >= 0):
            raise InvariantError(f"radius must be finite and >= 0, got {self.radius}")
        if not math.isfinite(self.intensity):
            raise InvariantError(f"intensity must be finite, got {self.intensity}")
        if self.radius > 0 and self.radius >= -self.center[2]:
            raise InvariantError(
                f"ball of radius {self.radius} at depth {-self.center[2]} reaches the surface"
            )

    @property
    def volume(self) -> float:
        return 4.0 / 3.0 * math.pi * self.radius**3

    @property
    def is_delta(self) -> bool:
        return self.radius == 0.0


@dataclass(frozen=True)
class Scene:
    """An ordered collection of scatterers plus the medium bound ``c0``.

    ``c0`` defaults to the smallest value consistent with every volumetric
    scatterer, i.e. max |intensity| / volume.  An empty scene is allowed as
    the homogeneous background; files and the CLI require at least one
    scatterer (see :meth:`require_nonempty`).
    """

    scatterers: Tuple[Scatterer, ...] = ()
    c0: float | None = None

    def __post_init__(self):
        scs = tuple(
            s if isinstance(s, Scatterer) else Scatterer(**s) for s in self.scatterers
        )
        object.__setattr__(self, "scatterers", scs)
        if len(scs) > MAX_SCATTERERS:
            raise InvariantError(f"at most {MAX_SCATTERERS} scatterers allowed, got {len(scs)}")
        for i in range(len(scs)):
            for j in range(i + 1, len(scs)):
                a, b = scs[i], scs[j]
                dist = math.dist(a.center, b.center)
                if not dist > a.radius + b.radius:
                    raise InvariantError(f"scatterers {i} and {j} overlap")
        required = max(
            (abs(s.intensity) / s.volume for s in scs if s.radius > 0), default=0.0
        )
        if self.c0 is None:
            object.__setattr__(self, "c0", required)
        else:
            c0 = float(self.c0)
            object.__setattr__(self, "c0", c0)
            if not (math.isfinite(c0) and c0 >= 0):
                raise InvariantError(f"c0 must be finite and >= 0, got {c0}")
            if c0 < required * (1 - 1e-12):
                raise InvariantError(
                    f"c0={c0} is below the mean profile {required} implied by the intensities"
                )

    @property
    def M(self) -> int:
        return len(self.scatterers)

    @property
    def centers(self) -> np.ndarray:
        return np.array([s.center for s in self.scatterers], dtype=float).reshape(-1, 3)

    @property
    def radii(self) -> np.ndarray:
        return np.array([s.radius for s in self.scatterers], dtype=float)

    @property
    def intensities(self) -> np.ndarray:
        return np.array([s.intensity for s in self.scatterers], dtype=float)

    def require_nonempty(self) -> "Scene":
        if self.M < 1:
            raise InvariantError("scene must contain at least one scatterer")
        return self

    def with_intensities(self, intensities) -> "Scene":
        scs = [replace(s, intensity=float(v)) for s, v in zip(self.scatterers, intensities)]
        return Scene(tuple(scs))


@dataclass(frozen=True)
class MeasurementPair:
    """A source/receiver pair on the surface plane."""

    source: Point3
    receiver: Point3

    def __post_init__(self):
        src = as_point(self.source, "source")
        rec = as_point(self.receiver, "receiver")
        if src[2] != 0.0 or rec[2] != 0.0:
            raise InvariantError(f"pair points must lie on x3=0, got {src}, {rec}")
        if src == rec:
            raise CoincidentPointsError(f"source and receiver coincide at {src}")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "receiver", rec)


class PairGeometry:
    """Array view of a list of pairs.

    Sources and receivers are usually drawn from small grids, so Green's
    functions are evaluated once per distinct surface point and gathered
    per pair through ``source_index`` / ``receiver_index``.
    """

    def __init__(self, pairs: Sequence[MeasurementPair]):
        self.pairs = tuple(pairs)
        self.sources = np.array([p.source for p in self.pairs], dtype=float).reshape(-1, 3)
        self.receivers = np.array([p.receiver for p in self.pairs], dtype=float).reshape(-1, 3)
        both = np.concatenate([self.sources, self.receivers])
        self.points, inverse = np.unique(both, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        J = len(self.pairs)
        self.source_index = inverse[:J]
        self.receiver_index = inverse[J:]
        self._direct = {}

    @cached_property
    def split(self):
        """Distinct receiver points, distinct source points and the pair
        count matrix ``W[r, s]``, plus per-pair row/column indices into it."""
        rec, ri = np.unique(self.receivers, axis=0, return_inverse=True)
        src, si = np.unique(self.sources, axis=0, return_inverse=True)
        ri, si = ri.ravel(), si.ravel()
        W = np.zeros((len(rec), len(src)))
        np.add.at(W, (ri, si), 1.0)
        return rec, src, W, ri, si

    def __len__(self):
        return len(self.pairs)

    def direct(self, k: float) -> np.ndarray:
        """g(x_j, y_j, k) for every pair (cached per wavenumber, read-only)."""
        if k not in self._direct:
            g = green(self.receivers, self.sources, k)
            g.setflags(write=False)
            self._direct[k] = g
        return self._direct[k]


PairsLike = Union[MeasurementPair, Sequence[MeasurementPair], PairGeometry]


def _geometry(pairs: PairsLike):
    if isinstance(pairs, PairGeometry):
        return pairs, False
    if isinstance(pairs, MeasurementPair):
        return PairGeometry([pairs]), True
    return PairGeometry(pairs), False


def _check_k(k, strict=False) -> float:
    k = float(k)
    if not math.isfinite(k) or k < 0 or (strict and k == 0):
        raise InvariantError(f"wavenumber must be {'> 0' if strict else '>= 0'}, got {k}")
    return k


@dataclass(frozen=True, eq=False)
class Dataset:
    """Surface measurements u(x_j, y_j, k) at a single wavenumber."""

    k: float
    pairs: Tuple[MeasurementPair, ...]
    fields: np.ndarray
    provenance: str = "external"
    noise_level: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "k", _check_k(self.k, strict=True))
        object.__setattr__(self, "pairs", tuple(self.pairs))
        u = np.array(self.fields, dtype=complex).reshape(-1)
        u.setflags(write=False)
        object.__setattr__(self, "fields", u)
        if len(self.pairs) < 1:
            raise InvariantError("dataset must contain at least one pair")
        if len(self.pairs) != len(u):
            raise InvariantError(f"{len(self.pairs)} pairs but {len(u)} field values")
        if not np.all(np.isfinite(u)):
            raise InvariantError("dataset contains non-finite field values")
        if self.provenance not in PROVENANCES:
            raise InvariantError(f"unknown provenance {self.provenance!r}")
        if not (math.isfinite(self.noise_level) and self.noise_level >= 0):
            raise InvariantError(f"noise level must be >= 0, got {self.noise_level}")

    @property
    def J(self) -> int:
        return len(self.pairs)

    @cached_property
    def geometry(self) -> PairGeometry:
        return PairGeometry(self.pairs)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def _distance(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = a - b
    r = np.sqrt(np.einsum("...i,...i->...", d, d))
    if np.any(r == 0):
        raise CoincidentPointsError("Green's function evaluated at coincident points")
    return d, r


def green(a, b, k):
    """Outgoing free-space Helmholtz kernel exp(ik|a-b|) / (4 pi |a-b|).

    ``a`` and ``b`` broadcast over leading axes; the last axis has length 3.
    """
    k = _check_k(k)
    _, r = _distance(a, b)
    return np.exp(1j * k * r) / (4 * np.pi * r)


def green_and_gradient(x, z, k):
    """Kernel g(x, z, k) and its gradient with respect to ``z``.

    Returns ``(g, dg)`` with ``dg.shape == g.shape + (3,)``.
    """
    k = _check_k(k)
    d, r = _distance(z, x)
    g = np.exp(1j * k * r) / (4 * np.pi * r)
    dg = (g * (1j * k - 1.0 / r) / r)[..., None] * d
    return g, dg


def pair_kernel(pair: MeasurementPair, z, k):
    """Product kernel g(x_j, z, k) g(y_j, z, k) for one pair."""
    return green(pair.receiver, z, k) * green(pair.source, z, k)


def _surface_green(geom: PairGeometry, positions, k):
    # (..., U, M): Green's function from each distinct surface point to each position
    positions = np.asarray(positions, dtype=float)
    return green(geom.points[:, None, :], positions[..., None, :, :], k)


def kernel_matrix(pairs: PairsLike, positions, k) -> np.ndarray:
    """Matrix of pair kernels, shape ``(..., J, M)`` for ``positions`` of
    shape ``(..., M, 3)``."""
    geom, _ = _geometry(pairs)
    gs = _surface_green(geom, positions, k)
    return gs[..., geom.receiver_index, :] * gs[..., geom.source_index, :]


def kernel_matrix_and_gradient(pairs: PairsLike, positions, k):
    """Kernel matrix ``(J, M)`` and its derivative with respect to each
    position, shape ``(J, M, 3)``."""
    geom, _ = _geometry(pairs)
    positions = np.asarray(positions, dtype=float)
    g, dg = green_and_gradient(geom.points[:, None, :], positions[None, :, :], k)
    gr, gs = g[geom.receiver_index], g[geom.source_index]
    dK = dg[geom.receiver_index] * gs[..., None] + gr[..., None] * dg[geom.source_index]
    return gr * gs, dK


# ---------------------------------------------------------------------------
# Forward models
# ---------------------------------------------------------------------------


def _result(values, single):
    return complex(values[0]) if single else values


def forward_point_born(scene: Scene, pairs: PairsLike, k):
    """Point-scatterer Born field g(x,y) + k^2 sum_m G(x,y,z_m) v_m.

    Accepts a single pair (returns a complex number) or a list of pairs
    (returns an array).
    """
    geom, single = _geometry(pairs)
    u = geom.direct(k).copy()
    if scene.M:
        u = u + k**2 * kernel_matrix(geom, scene.centers, k) @ scene.intensities
    return _result(u, single)


def ball_quadrature(order: int):
    """Product rule on the unit ball: Gauss-Legendre in r (with the r^2
    Jacobian) and in cos(theta), trapezoid in phi.

    Returns nodes ``(N, 3)`` and weights summing to the ball volume 4 pi / 3.
    """
    order = int(order)
    if order < 1:
        raise InvariantError(f"quadrature order must be >= 1, got {order}")
    t, wt = np.polynomial.legendre.leggauss(order)
    r, wr = 0.5 * (t + 1), 0.5 * wt * (0.5 * (t + 1)) ** 2
    mu, wmu = t, wt
    nphi = 2 * order
    phi = 2 * np.pi * (np.arange(nphi) + 0.5) / nphi
    wphi = np.full(nphi, 2 * np.pi / nphi)
    R, MU, PHI = np.meshgrid(r, mu, phi, indexing="ij")
    S = np.sqrt(1 - MU**2)
    nodes = np.stack([R * S * np.cos(PHI), R * S * np.sin(PHI), R * MU], axis=-1).reshape(-1, 3)
    weights = (wr[:, None, None] * wmu[None, :, None] * wphi[None, None, :]).ravel()
    return nodes, weights


def forward_volume_born(scene: Scene, pairs: PairsLike, k, quad_order: int = 8):
    """Born field of balls carrying a constant profile v_m / |B_m|.

    The scattering integral over each ball is evaluated with
    :func:`ball_quadrature` of the given order.
    """
    geom, single = _geometry(pairs)
    for i, s in enumerate(scene.scatterers):
        if s.radius <= 0:
            raise ZeroRadiusError(
                f"scatterer {i} has zero radius; volume integral undefined, use the point model"
            )
    nodes, weights = ball_quadrature(quad_order)
    u = geom.direct(k).copy()
    chunk = max(1, 2_000_000 // len(nodes))
    for s in scene.scatterers:
        pts = np.asarray(s.center) + s.radius * nodes
        gs = green(geom.points[:, None, :], pts[None, :, :], k)  # (U, N)
        # profile value times ball weights: v / |B| * w * rho^3 == v * w / (4 pi / 3)
        w = s.intensity * weights / (4.0 / 3.0 * np.pi)
        for lo in range(0, len(geom), chunk):
            sl = slice(lo, lo + chunk)
            prod = gs[geom.receiver_index[sl]] * gs[geom.source_index[sl]]
            u[sl] += k**2 * (prod @ w)
    return _result(u, single)


def foldy_matrix(scene: Scene, k) -> np.ndarray:
    """System matrix I - k^2 D C of the self-consistent point model."""
    z = scene.centers
    M = scene.M
    C = np.zeros((M, M), dtype=complex)
    for m in range(M):
        for n in range(M):
            if m != n:
                C[m, n] = green(z[m], z[n], k)
    return np.eye(M) - k**2 * scene.intensities[:, None] * C


def forward_foldy(scene: Scene, pairs: PairsLike, k):
    """Multiple-scattering field of point scatterers.

    Each scatterer is driven by the incident field plus the fields
    re-radiated by the others; the effective amplitudes solve
    ``A_m = v_m [g(z_m, y) + k^2 sum_{m' != m} g(z_m, z_m') A_m']``.
    """
    geom, single = _geometry(pairs)
    u = geom.direct(k).copy()
    if scene.M == 0:
        return _result(u, single)
    centers = scene.centers
    system = foldy_matrix(scene, k)
    cond = np.linalg.cond(system)
    if not np.isfinite(cond) or cond > FOLDY_COND_LIMIT:
        raise SingularSystemError(f"multiple-scattering system is singular (cond={cond:.3g})")
    gs = _surface_green(geom, centers, k)  # (U, M)
    rhs = scene.intensities[:, None] * gs[geom.source_index].T  # (M, J)
    amps = np.linalg.solve(system, rhs)
    u = u + k**2 * np.einsum("jm,mj->j", gs[geom.receiver_index], amps)
    return _result(u, single)


FORWARD_MODELS = {
    "point-born": forward_point_born,
    "volume-born": forward_volume_born,
    "foldy": forward_foldy,
}


def simulate(scene: Scene, pairs: Sequence[MeasurementPair], k, model="point-born", quad_order=8):
    """Synthesize a noiseless :class:`Dataset` with the chosen forward model."""
    if model not in FORWARD_MODELS:
        raise InvariantError(f"unknown forward model {model!r}")
    geom = PairGeometry(pairs)
    if model == "volume-born":
        u = forward_volume_born(scene, geom, k, quad_order)
    else:
        u = FORWARD_MODELS[model](scene, geom, k)
    data = Dataset(k=k, pairs=geom.pairs, fields=u, provenance=model)
    object.__setattr__(data, "geometry", geom)
    return data


def add_noise(data: Dataset, relative_level: float, seed: int) -> Dataset:
    """Add circular complex Gaussian noise scaled to the scattered field.

    The noise standard deviation is ``relative_level`` times the RMS of
    |u_j - g_j| over all pairs.
    """
    relative_level = float(relative_level)
    if not (math.isfinite(relative_level) and relative_level >= 0):
        raise InvariantError(f"noise level must be >= 0, got {relative_level}")
    u = data.fields.copy()
    if relative_level > 0:
        scattered = u - data.geometry.direct(data.k)
        sigma = relative_level * np.sqrt(np.mean(np.abs(scattered) ** 2))
        rng = np.random.default_rng(seed)
        eta = rng.standard_normal((data.J, 2)) @ np.array([1.0, 1j]) * (sigma / np.sqrt(2))
        u = u + eta
    meta = dict(data.meta, noise_seed=int(seed))
    out = Dataset(
        k=data.k,
        pairs=data.pairs,
        fields=u,
        provenance=data.provenance,
        noise_level=relative_level,
        meta=meta,
    )
    object.__setattr__(out, "geometry", data.geometry)
    return out

"""Checks of the single-scattering (Born) regime for a scene.

All quantities use the scene's own units; with lengths measured in units of
the scatterer depth they reduce to the usual dimensionless smallness
parameters:

* ``delta = M k^2 c0 rho^2`` -- strong condition, small for the Born series
  to hold everywhere;
* ``weak = M k^2 c0 rho^3 / d`` -- weaker condition, enough when only data on
  the surface plane are used;
* ``eps2_order = M^2 k^4 c0^2 rho^6 / d^3`` -- order of the error made by
  replacing the total field by the incident one inside the scattering
  integral (a field, so it carries units of 1/length).

For delta-type scatterers (radius 0) the product c0 rho^3 is replaced by
their strength V, and ``delta`` is infinite.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import InvariantError, ZeroScatteredFieldError
from .model import MeasurementPair, PairGeometry, Scene, _check_k, forward_foldy, forward_point_born

DEFAULT_THRESHOLD = 0.1


@dataclass(frozen=True)
class ValidityReport:
    delta: float
    weak: float
    d: float
    rho_max: float
    eps2_order: float
    born_ok: bool
    delta_scatterer: bool
    threshold: float = DEFAULT_THRESHOLD

    def as_dict(self) -> dict:
        return asdict(self)


def assess(scene: Scene, k, threshold: float = DEFAULT_THRESHOLD) -> ValidityReport:
    """Evaluate the Born-regime conditions for ``scene`` at wavenumber ``k``.

    ``d`` is the smallest ball-surface-to-plane distance.  ``born_ok`` is
    advisory: ``weak < threshold``.
    """
    k = _check_k(k, strict=True)
    if scene.M < 1:
        raise InvariantError("validity assessment needs at least one scatterer")
    M = scene.M
    depth = -scene.centers[:, 2]
    d = float(np.min(depth - scene.radii))
    if not d > 0:
        raise InvariantError(f"scatterer touches the surface (d = {d})")
    rho = float(scene.radii.max())
    c0 = scene.c0
    has_delta = any(s.is_delta for s in scene.scatterers)
    strength = c0 * rho**3
    if has_delta:
        strength = max(strength, max(abs(s.intensity) for s in scene.scatterers if s.is_delta))
        delta = math.inf
    else:
        delta = M * k**2 * c0 * rho**2
    weak = M * k**2 * strength / d
    eps2 = M**2 * k**4 * strength**2 / d**3
    return ValidityReport(
        delta=delta,
        weak=weak,
        d=d,
        rho_max=rho,
        eps2_order=eps2,
        born_ok=bool(weak < threshold),
        delta_scatterer=has_delta,
        threshold=float(threshold),
    )


def empirical_born_gap(scene: Scene, pairs: Sequence[MeasurementPair], k) -> float:
    """Size of the multiple-scattering correction on the surface.

    Returns max_j |u_foldy - u_point| / max_j |u_point - g|.
    """
    geom = pairs if isinstance(pairs, PairGeometry) else PairGeometry(pairs)
    u_point = forward_point_born(scene, geom, k)
    scattered = np.max(np.abs(u_point - geom.direct(k)))
    if scene.M == 0 or scattered == 0:
        raise ZeroScatteredFieldError("scene produces no scattered field")
    if scene.M == 1:
        return 0.0
    u_foldy = forward_foldy(scene, geom, k)
    return float(np.max(np.abs(u_foldy - u_point)) / scattered)

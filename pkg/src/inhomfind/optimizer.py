"""Global minimization of the misfit over scatterer positions.

Intensities are never searched: for every trial set of positions they are
obtained by variable projection.  The search runs in two stages,

1. a differential-evolution population search over the 3M position
   coordinates plus a handful of Latin-hypercube multistarts, and
2. a bounded trust-region least-squares refinement of the best stage-1
   candidates over all 4M parameters.

Everything is seeded; the same inputs and seed give identical results.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import differential_evolution, least_squares, linear_sum_assignment
from scipy.stats import qmc

from .errors import ConfigError, InvariantError, UnderdeterminedError
from .model import MAX_SCATTERERS, Scene, kernel_matrix_and_gradient
from .objective import CandidateParams, ReducedData, phi, project_intensities, screen_batch

logger = logging.getLogger(__name__)

#: relative misfit below which a model is taken to explain the data exactly
ORDER_FLOOR = 1e-12
#: intensities below this magnitude count as "nothing found"
ZERO_INTENSITY = 1e-12


@dataclass(frozen=True)
class SearchBox:
    """Axis-aligned search region below the surface."""

    x1: Tuple[float, float] = (-2.0, 2.0)
    x2: Tuple[float, float] = (-2.0, 2.0)
    depth: Tuple[float, float] = (0.5, 4.0)

    def __post_init__(self):
        for name in ("x1", "x2", "depth"):
            lo, hi = (float(c) for c in getattr(self, name))
            object.__setattr__(self, name, (lo, hi))
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ConfigError(f"search box {name} must be finite")
            if not lo < hi:
                raise ConfigError(f"infeasible search box: {name} range [{lo}, {hi}] is empty")
        if not self.depth[0] > 0:
            raise ConfigError(f"minimum search depth must be > 0, got {self.depth[0]}")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.x1[0], self.x2[0], -self.depth[1]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.x1[1], self.x2[1], -self.depth[0]])

    def bounds(self, M: int) -> List[Tuple[float, float]]:
        return list(zip(np.tile(self.lower, M), np.tile(self.upper, M)))

    def clip(self, positions) -> np.ndarray:
        return np.clip(np.asarray(positions, dtype=float), self.lower, self.upper)

    def contains(self, positions) -> bool:
        z = np.asarray(positions, dtype=float)
        return bool(np.all(z >= self.lower) and np.all(z <= self.upper))


@dataclass(frozen=True)
class SearchConfig:
    """Settings of the two-stage search.

    ``multistarts`` independent differential-evolution runs are made, each
    with ``popsize * 3M`` members and at most ``generations`` generations.
    The local stage stops after ``max_iter`` residual evaluations or when
    the scaled gradient / step fall below ``grad_tol`` / ``step_tol``.
    """

    M: int = 1
    box: SearchBox = field(default_factory=SearchBox)
    multistarts: int = 3
    popsize: int = 20
    generations: int = 300
    seed: int = 0
    max_iter: int = 200
    grad_tol: float = 1e-15
    step_tol: float = 1e-15

    def __post_init__(self):
        if isinstance(self.box, dict):
            object.__setattr__(self, "box", SearchBox(**self.box))
        for name in ("M", "multistarts", "popsize", "generations", "max_iter"):
            if int(getattr(self, name)) != getattr(self, name):
                raise ConfigError(f"{name} must be an integer")
            object.__setattr__(self, name, int(getattr(self, name)))
        if not 1 <= self.M <= MAX_SCATTERERS:
            raise ConfigError(f"M must be in [1, {MAX_SCATTERERS}], got {self.M}")
        if self.multistarts < 1:
            raise ConfigError("multistart count must be >= 1")
        if self.popsize < 1 or self.generations < 0 or self.max_iter < 1:
            raise ConfigError("population size and max iterations must be positive")
        if not (self.grad_tol > 0 and self.step_tol > 0):
            raise ConfigError("tolerances must be > 0")

    def with_M(self, M: int) -> "SearchConfig":
        return replace(self, M=M)


@dataclass(frozen=True, eq=False)
class InversionResult:
    params: CandidateParams
    phi_value: float
    converged: bool
    evaluations: int
    #: (start positions, final misfit) for every refined start, in start order
    history: Tuple[Tuple[np.ndarray, float], ...] = ()
    #: distinct refined minima with misfit within 2x of the best (best first)
    basins: Tuple[CandidateParams, ...] = ()

    @property
    def nothing_found(self) -> bool:
        return bool(np.all(np.abs(self.params.intensities) < ZERO_INTENSITY))


def _finalize(positions, reduced):
    v, value = project_intensities(positions, reduced)
    return CandidateParams(positions, v), value


# ---------------------------------------------------------------------------
# Local stage
# ---------------------------------------------------------------------------


def local_refine(start: CandidateParams, reduced: ReducedData, config: SearchConfig) -> InversionResult:
    """Bounded least-squares descent from ``start``.

    The joint 4M-parameter residual is minimized with a trust-region
    reflective method; intensities are re-projected before and after.  The
    returned misfit never exceeds the misfit of ``start``.
    """
    box = config.box
    M = start.M
    scale = math.sqrt(reduced.norm2) or 1.0
    start_value = phi(start, reduced)
    best, best_value = start, start_value
    z0 = box.clip(start.positions)
    cand, value = _finalize(z0, reduced)
    nfev = 2
    if value <= best_value:
        best, best_value = cand, value
    if best_value == 0.0:
        return InversionResult(best, best_value, True, nfev, ((z0, best_value),), (best,))

    K_cache = {}

    def unpack(x):
        return x[: 3 * M].reshape(M, 3), x[3 * M :]

    def fun(x):
        z, v = unpack(x)
        K, dK = kernel_matrix_and_gradient(reduced.geometry, z, reduced.k)
        K_cache["x"], K_cache["K"], K_cache["dK"] = x.copy(), K, dK
        r = (reduced.f - K @ v) / scale
        return np.concatenate([r.real, r.imag])

    def jac(x):
        if "x" in K_cache and np.array_equal(K_cache["x"], x):
            K, dK = K_cache["K"], K_cache["dK"]
        else:
            K, dK = kernel_matrix_and_gradient(reduced.geometry, unpack(x)[0], reduced.k)
        _, v = unpack(x)
        Jz = -(dK * v[None, :, None]).reshape(len(K), 3 * M) / scale
        Jv = -K / scale
        Jc = np.concatenate([Jz, Jv], axis=1)
        return np.concatenate([Jc.real, Jc.imag])

    lo = np.concatenate([np.tile(box.lower, M), np.full(M, -np.inf)])
    hi = np.concatenate([np.tile(box.upper, M), np.full(M, np.inf)])
    x0 = np.clip(best.as_vector(), lo, hi)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        sol = least_squares(
            fun,
            x0,
            jac=jac,
            bounds=(lo, hi),
            method="trf",
            x_scale="jac",
            ftol=config.step_tol,
            xtol=config.step_tol,
            gtol=config.grad_tol,
            max_nfev=config.max_iter,
        )
    nfev += sol.nfev
    z_end = box.clip(unpack(sol.x)[0])
    for cand in (CandidateParams(z_end, unpack(sol.x)[1]), _finalize(z_end, reduced)[0]):
        value = phi(cand, reduced)
        nfev += 1
        if value <= best_value:
            best, best_value = cand, value
    converged = sol.status > 0 or best_value <= ORDER_FLOOR**2 * reduced.norm2
    return InversionResult(best, best_value, bool(converged), nfev, ((z0, best_value),), (best,))


# ---------------------------------------------------------------------------
# Global stage
# ---------------------------------------------------------------------------


def _check_data(reduced: ReducedData, M: int):
    if reduced.J == 0:
        raise InvariantError("empty dataset")
    if reduced.J < M:
        raise UnderdeterminedError(f"J={reduced.J} pairs are fewer than M={M} scatterers")
    if 2 * reduced.J < 4 * M:
        warnings.warn(
            f"only {2 * reduced.J} real equations for {4 * M} unknowns; estimates are not identifiable",
            stacklevel=3,
        )


def _lhs(box: SearchBox, M: int, n: int, seed) -> np.ndarray:
    unit = qmc.LatinHypercube(d=3 * M, rng=np.random.default_rng(seed)).random(n)
    return qmc.scale(unit, np.tile(box.lower, M), np.tile(box.upper, M))


def _distinct(a: CandidateParams, b: CandidateParams, tol=1e-3) -> bool:
    d = np.linalg.norm(a.positions[:, None, :] - b.positions[None, :, :], axis=-1)
    rows, cols = linear_sum_assignment(d)
    return bool(d[rows, cols].max() > tol)


def global_search(
    reduced: ReducedData, config: SearchConfig, seeds: Optional[Sequence] = None
) -> InversionResult:
    """Find the best M-scatterer model within ``config.box``.

    Stage 1 runs ``config.multistarts`` independent differential-evolution
    searches over the 3M position coordinates, each from its own
    Latin-hypercube population.  The misfit is invariant under relabelling
    the scatterers, which traps single runs in mixed-label basins now and
    then; independent runs make that unlikely.  Stage 2 refines the best
    member of every run plus any ``seeds`` (extra position sets of shape
    ``(M, 3)``, also injected into the first population).  Among equal
    misfits the earliest start wins.
    """
    M = config.M
    _check_data(reduced, M)
    box = config.box
    seeds = [box.clip(np.asarray(s, dtype=float).reshape(M, 3)).ravel() for s in (seeds or [])]
    npop = max(5, config.popsize * 3 * M)

    if reduced.norm2 == 0.0:
        # every position explains zero data with zero intensities
        z = _lhs(box, M, 1, [config.seed, 0])[0].reshape(M, 3)
        params = CandidateParams(z, np.zeros(M))
        return InversionResult(params, 0.0, True, 1, ((z, 0.0),), (params,))

    evaluations = 0

    def screen(x):
        nonlocal evaluations
        x = np.asarray(x).reshape(3 * M, -1)
        evaluations += x.shape[1]
        return screen_batch(x.T.reshape(-1, M, 3), reduced)

    starts = []
    for run in range(config.multistarts):
        init = _lhs(box, M, npop, [config.seed, run])
        if run == 0:
            for i, x in enumerate(seeds[:npop]):
                init[i] = x
        if config.generations == 0:
            starts.append(init[int(np.argmin(screen(init.T)))])
            continue
        de = differential_evolution(
            screen,
            box.bounds(M),
            maxiter=config.generations,
            popsize=config.popsize,
            init=init,
            rng=np.random.default_rng([config.seed, run, 1]),
            polish=False,
            tol=1e-10,
            updating="deferred",
            vectorized=True,
        )
        starts.append(de.x)
    starts.extend(seeds)

    history, refined = [], []
    best = None
    for x in starts:
        z = np.asarray(x).reshape(M, 3)
        v, _ = project_intensities(z, reduced)
        res = local_refine(CandidateParams(z, v), reduced, config)
        evaluations += res.evaluations + 1
        history.append((z, res.phi_value))
        refined.append(res)
        if best is None or res.phi_value < best.phi_value:
            best = res
    basins = [best.params]
    for res in sorted(refined, key=lambda r: r.phi_value):
        within = res.phi_value <= 2.0 * best.phi_value
        if within and all(_distinct(res.params, b) for b in basins):
            basins.append(res.params)
    value = phi(best.params, reduced)
    logger.debug("global search M=%d: phi=%.3e after %d evaluations", M, value, evaluations)
    return InversionResult(
        best.params, value, best.converged, evaluations, tuple(history), tuple(basins)
    )


# ---------------------------------------------------------------------------
# Model order
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OrderScan:
    selected: int
    #: best misfit for M = 1, 2, ... in scan order
    phis: Tuple[float, ...]
    results: Tuple[InversionResult, ...]

    @property
    def best(self) -> InversionResult:
        return self.results[self.selected - 1]


def _new_scatterer_seed(prev: CandidateParams, reduced: ReducedData, box: SearchBox, n=6):
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(box.lower, box.upper)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    trial = np.concatenate(
        [np.broadcast_to(prev.positions, (len(grid),) + prev.positions.shape), grid[:, None]],
        axis=1,
    )
    values = screen_batch(trial, reduced)
    return trial[int(np.argmin(values))]


def order_scan(
    reduced: ReducedData, config: SearchConfig, M_max: int, drop_threshold: float = 0.5
) -> OrderScan:
    """Fit M = 1, 2, ... scatterers until the misfit stops improving.

    Stops at the first M whose misfit is below ``ORDER_FLOOR`` times
    sum |f|^2, or at M when the next ratio phi[M+1] / phi[M] exceeds
    ``drop_threshold``.  Each M + 1 search is seeded with the M result plus
    one extra scatterer, which keeps the misfit sequence non-increasing.
    """
    if int(M_max) != M_max or not 1 <= M_max <= MAX_SCATTERERS:
        raise ConfigError(f"M_max must be an integer in [1, {MAX_SCATTERERS}], got {M_max}")
    if not 0 < drop_threshold < 1:
        raise ConfigError(f"drop threshold must lie in (0, 1), got {drop_threshold}")
    floor = ORDER_FLOOR * reduced.norm2
    results, phis = [], []
    selected = None
    for M in range(1, M_max + 1):
        seeds = None
        if results:
            seeds = [_new_scatterer_seed(results[-1].params, reduced, config.box)]
        res = global_search(reduced, config.with_M(M), seeds=seeds)
        if phis and res.phi_value > phis[-1]:
            # only possible through singular-value truncation in the projection
            logger.warning("M=%d misfit %.3e above M-1 value %.3e", M, res.phi_value, phis[-1])
        results.append(res)
        phis.append(res.phi_value)
        if res.phi_value <= floor:
            selected = M
            break
        if len(phis) > 1 and phis[-1] / phis[-2] > drop_threshold:
            selected = M - 1
            break
    if selected is None:
        selected = len(phis)
    return OrderScan(selected, tuple(phis), tuple(results))


def estimate_order(
    reduced: ReducedData, config: SearchConfig, M_max: int, drop_threshold: float = 0.5
) -> int:
    return order_scan(reduced, config, M_max, drop_threshold).selected


# ---------------------------------------------------------------------------
# Evaluation harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Match:
    estimate_index: int
    truth_index: int
    position_error: float
    #: |v_est - v_true| / |v_true|, or the absolute error when v_true == 0
    intensity_error: float


def match_scatterers(estimate: CandidateParams, truth: Scene) -> List[Match]:
    """Pair estimated and true scatterers by minimum total position error."""
    if estimate.M != truth.M:
        raise InvariantError(f"cannot match {estimate.M} estimates to {truth.M} true scatterers")
    zt, vt = truth.centers, truth.intensities
    d = np.linalg.norm(estimate.positions[:, None, :] - zt[None, :, :], axis=-1)
    rows, cols = linear_sum_assignment(d)
    out = []
    for i, j in sorted(zip(rows, cols), key=lambda rc: rc[1]):
        err = abs(estimate.intensities[i] - vt[j])
        if vt[j] != 0:
            err /= abs(vt[j])
        out.append(Match(int(i), int(j), float(d[i, j]), float(err)))
    return out


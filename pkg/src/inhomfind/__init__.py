"""Locate small inhomogeneities in a half-space from surface scattering data."""

from .errors import (
    CoincidentPointsError,
    ConfigError,
    FormatError,
    InhomfindError,
    InvariantError,
    SingularSystemError,
    UnderdeterminedError,
    ZeroRadiusError,
    ZeroScatteredFieldError,
)
from .model import (
    Dataset,
    MeasurementPair,
    Scatterer,
    Scene,
    add_noise,
    forward_foldy,
    forward_point_born,
    forward_volume_born,
    green,
    pair_kernel,
    simulate,
)
from .objective import (
    CandidateParams,
    ReducedData,
    phi,
    phi_gradient,
    project_intensities,
    reduce,
)
from .optimizer import (
    InversionResult,
    SearchBox,
    SearchConfig,
    estimate_order,
    global_search,
    local_refine,
    match_scatterers,
    order_scan,
)
from .validity import ValidityReport, assess, empirical_born_gap

__version__ = "0.1.0"

__all__ = [
    "CoincidentPointsError",
    "ConfigError",
    "FormatError",
    "InhomfindError",
    "InvariantError",
    "SingularSystemError",
    "UnderdeterminedError",
    "ZeroRadiusError",
    "ZeroScatteredFieldError",
    "Dataset",
    "MeasurementPair",
    "Scatterer",
    "Scene",
    "add_noise",
    "forward_foldy",
    "forward_point_born",
    "forward_volume_born",
    "green",
    "pair_kernel",
    "simulate",
    "CandidateParams",
    "ReducedData",
    "phi",
    "phi_gradient",
    "project_intensities",
    "reduce",
    "InversionResult",
    "SearchBox",
    "SearchConfig",
    "estimate_order",
    "global_search",
    "local_refine",
    "match_scatterers",
    "order_scan",
    "ValidityReport",
    "assess",
    "empirical_born_gap",
]

"""Scene, dataset and experiment-config files, and surface array layouts.

All files are JSON.  Floats are written with Python's shortest round-trip
representation, so a value read back is bit-identical to the one written;
complex field values are stored as ``[re, im]`` pairs.  Files produced by
:func:`save_scene` / :func:`save_dataset` are canonical: loading and saving
them again reproduces the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional, Tuple

import numpy as np

from .errors import ConfigError, FormatError, InhomfindError
from .model import PROVENANCES, Dataset, MeasurementPair, Scatterer, Scene
from .optimizer import SearchBox, SearchConfig

SCENE_FORMAT = "inhomfind.scene"
DATASET_FORMAT = "inhomfind.dataset"
VERSION = 1


# ---------------------------------------------------------------------------
# Low-level helpers
# ---------------------------------------------------------------------------


def _read_json(path) -> Any:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read file: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def _dump(obj) -> str:
    return json.dumps(obj, allow_nan=False)


def _field(obj, key, where, kind=None, default=...):
    if not isinstance(obj, dict):
        raise FormatError(f"{where}: expected an object")
    if key not in obj:
        if default is not ...:
            return default
        raise FormatError(f"{where}.{key}: missing field")
    value = obj[key]
    if kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise FormatError(f"{where}.{key}: expected a number, got {value!r}")
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise FormatError(f"{where}.{key}: expected an integer, got {value!r}")
        return value
    if kind == "list" and not isinstance(value, list):
        raise FormatError(f"{where}.{key}: expected a list")
    return value


def _numbers(value, n, where) -> List[float]:
    if (
        not isinstance(value, list)
        or len(value) != n
        or any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in value)
    ):
        raise FormatError(f"{where}: expected a list of {n} numbers")
    return [float(c) for c in value]


def _check_header(obj, fmt, where):
    got = _field(obj, "format", where)
    if got != fmt:
        raise FormatError(f"{where}.format: expected {fmt!r}, got {got!r}")
    if _field(obj, "version", where, "int") != VERSION:
        raise FormatError(f"{where}.version: unsupported version")


# ---------------------------------------------------------------------------
# Scenes
# ---------------------------------------------------------------------------


def scene_text(scene: Scene) -> str:
    """Canonical file content of ``scene``."""
    lines = [
        "{",
        f'  "format": {_dump(SCENE_FORMAT)},',
        f'  "version": {VERSION},',
        f'  "c0": {_dump(scene.c0)},',
        '  "scatterers": [',
    ]
    rows = [
        f'    {{"center": {_dump(list(s.center))}, "radius": {_dump(s.radius)}, '
        f'"intensity": {_dump(s.intensity)}}}'
        for s in scene.scatterers
    ]
    lines.append(",\n".join(rows))
    lines += ["  ]", "}"]
    return "\n".join(line for line in lines if line) + "\n"


def scene_hash(scene: Scene) -> str:
    return hashlib.sha256(scene_text(scene).encode()).hexdigest()


def parse_scene(obj, where="scene") -> Scene:
    _check_header(obj, SCENE_FORMAT, where)
    c0 = _field(obj, "c0", where, "number", default=None)
    raw = _field(obj, "scatterers", where, "list")
    if not raw:
        raise FormatError(f"{where}.scatterers: a scene needs at least one scatterer (M >= 1)")
    scatterers = []
    for i, item in enumerate(raw):
        at = f"{where}.scatterers[{i}]"
        center = _numbers(_field(item, "center", at), 3, f"{at}.center")
        radius = _field(item, "radius", at, "number", default=0.0)
        intensity = _field(item, "intensity", at, "number")
        try:
            scatterers.append(Scatterer(tuple(center), radius, intensity))
        except InhomfindError as exc:
            raise type(exc)(f"{at}: {exc}") from None
    try:
        return Scene(tuple(scatterers), c0).require_nonempty()
    except InhomfindError as exc:
        raise type(exc)(f"{where}: {exc}") from None


def load_scene(path) -> Scene:
    return parse_scene(_read_json(path), str(path))


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(scene_text(scene))


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


def dataset_text(data: Dataset) -> str:
    provenance = {"model": data.provenance, **data.meta}
    lines = [
        "{",
        f'  "format": {_dump(DATASET_FORMAT)},',
        f'  "version": {VERSION},',
        f'  "k": {_dump(data.k)},',
        f'  "noise_level": {_dump(data.noise_level)},',
        f'  "provenance": {json.dumps(provenance, sort_keys=True, allow_nan=False)},',
        '  "pairs": [',
        ",\n".join(
            f"    {_dump(list(p.source) + list(p.receiver))}" for p in data.pairs
        ),
        "  ],",
        '  "fields": [',
        ",\n".join(f"    {_dump([u.real, u.imag])}" for u in data.fields.tolist()),
        "  ]",
        "}",
    ]
    return "\n".join(lines) + "\n"


def parse_dataset(obj, where="dataset") -> Dataset:
    _check_header(obj, DATASET_FORMAT, where)
    k = _field(obj, "k", where, "number")
    noise = _field(obj, "noise_level", where, "number", default=0.0)
    prov = dict(_field(obj, "provenance", where, default={"model": "external"}))
    model = prov.pop("model", "external")
    if model not in PROVENANCES:
        raise FormatError(f"{where}.provenance.model: unknown model {model!r}")
    raw_pairs = _field(obj, "pairs", where, "list")
    raw_fields = _field(obj, "fields", where, "list")
    if len(raw_pairs) != len(raw_fields):
        raise FormatError(f"{where}: {len(raw_pairs)} pairs but {len(raw_fields)} fields")
    pairs = []
    for j, row in enumerate(raw_pairs):
        vals = _numbers(row, 6, f"{where}.pairs[{j}]")
        try:
            pairs.append(MeasurementPair(tuple(vals[:3]), tuple(vals[3:])))
        except InhomfindError as exc:
            raise type(exc)(f"{where}.pairs[{j}]: {exc}") from None
    u = np.empty(len(raw_fields), dtype=complex)
    for j, row in enumerate(raw_fields):
        re, im = _numbers(row, 2, f"{where}.fields[{j}]")
        u[j] = complex(re, im)
    try:
        return Dataset(k=k, pairs=pairs, fields=u, provenance=model, noise_level=noise, meta=prov)
    except InhomfindError as exc:
        raise type(exc)(f"{where}: {exc}") from None


def load_dataset(path) -> Dataset:
    return parse_dataset(_read_json(path), str(path))


def save_dataset(data: Dataset, path) -> None:
    Path(path).write_text(dataset_text(data))


# ---------------------------------------------------------------------------
# Surface arrays
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid of ``n1 x n2`` points on the surface plane."""

    x1: Tuple[float, float] = (-2.0, 2.0)
    x2: Tuple[float, float] = (-2.0, 2.0)
    n1: int = 16
    n2: int = 16

    def __post_init__(self):
        for name in ("x1", "x2"):
            lo, hi = (float(c) for c in getattr(self, name))
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ConfigError(f"grid extent {name}=[{lo}, {hi}] must be finite and positive")
            object.__setattr__(self, name, (lo, hi))
        for name in ("n1", "n2"):
            n = getattr(self, name)
            if isinstance(n, bool) or int(n) != n or n < 1:
                raise ConfigError(f"grid count {name} must be an integer >= 1, got {n!r}")
            object.__setattr__(self, name, int(n))

    def points(self) -> List[Tuple[float, float, float]]:
        """Row-major list of grid points (x1 outer, x2 inner)."""

        def axis(lim, n):
            return [0.5 * (lim[0] + lim[1])] if n == 1 else np.linspace(*lim, n).tolist()

        return [(a, b, 0.0) for a in axis(self.x1, self.n1) for b in axis(self.x2, self.n2)]


@dataclass(frozen=True)
class ArraySpec:
    sources: GridSpec = field(default_factory=GridSpec)
    receivers: GridSpec = field(default_factory=GridSpec)
    min_offset: float = 1e-9

    def __post_init__(self):
        for name in ("sources", "receivers"):
            value = getattr(self, name)
            if isinstance(value, dict):
                object.__setattr__(self, name, GridSpec(**value))
        if not (math.isfinite(self.min_offset) and self.min_offset > 0):
            raise ConfigError(f"minimum pair offset must be > 0, got {self.min_offset}")


def generate_pairs(spec: ArraySpec) -> List[MeasurementPair]:
    """All source/receiver combinations of the two grids, sources outer.

    Pairs closer than ``spec.min_offset`` are dropped.
    """
    pairs = [
        MeasurementPair(s, r)
        for s in spec.sources.points()
        for r in spec.receivers.points()
        if math.dist(s, r) >= spec.min_offset
    ]
    if not pairs:
        raise ConfigError("array specification excludes every source/receiver pair")
    return pairs


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------


FORWARD_CHOICES = ("point-born", "volume-born", "foldy")


@dataclass(frozen=True)
class ExperimentConfig:
    scene: Optional[Path] = None
    array: ArraySpec = field(default_factory=ArraySpec)
    k: float = 5.0
    model: str = "point-born"
    quad_order: int = 8
    noise_level: float = 0.0
    noise_seed: int = 0
    search: SearchConfig = field(default_factory=SearchConfig)
    M_max: int = 4
    drop_threshold: float = 0.5
    out: Path = Path("out")

    def __post_init__(self):
        if self.model not in FORWARD_CHOICES:
            raise ConfigError(f"forward model must be one of {FORWARD_CHOICES}, got {self.model!r}")
        if not (math.isfinite(self.k) and self.k > 0):
            raise ConfigError(f"k must be > 0, got {self.k}")
        if isinstance(self.quad_order, bool) or int(self.quad_order) != self.quad_order or self.quad_order < 1:
            raise ConfigError(f"quad_order must be an integer >= 1, got {self.quad_order!r}")
        if not (math.isfinite(self.noise_level) and self.noise_level >= 0):
            raise ConfigError(f"noise level must be >= 0, got {self.noise_level}")


def _build(cls, obj, where, **conv):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    known = set(cls.__dataclass_fields__)
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {key: conv[key](val) if key in conv else val for key, val in obj.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(obj, base: Path = Path(".")) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig`; relative paths resolve against ``base``."""
    if not isinstance(obj, dict):
        raise ConfigError("config: expected an object")
    obj = dict(obj)
    kwargs = {}
    if "scene" in obj:
        kwargs["scene"] = base / obj.pop("scene")
    if "out" in obj:
        kwargs["out"] = base / obj.pop("out")
    if "array" in obj:
        arr = dict(obj.pop("array"))
        for side in ("sources", "receivers"):
            if side in arr:
                arr[side] = _build(GridSpec, arr[side], f"config.array.{side}")
        kwargs["array"] = _build(ArraySpec, arr, "config.array")
    if "model" in obj:
        model = obj.pop("model")
        if isinstance(model, dict):
            kwargs["model"] = model.get("name", "point-born")
            if "quad_order" in model:
                kwargs["quad_order"] = model["quad_order"]
        else:
            kwargs["model"] = model
    if "noise" in obj:
        noise = obj.pop("noise")
        kwargs["noise_level"] = float(noise.get("level", 0.0))
        kwargs["noise_seed"] = int(noise.get("seed", 0))
    if "search" in obj:
        search = dict(obj.pop("search"))
        if "box" in search:
            search["box"] = _build(SearchBox, search["box"], "config.search.box")
        kwargs["search"] = _build(SearchConfig, search, "config.search")
    if "order" in obj:
        order = obj.pop("order")
        kwargs["M_max"] = order.get("M_max", 4)
        kwargs["drop_threshold"] = order.get("drop_threshold", 0.5)
    if "k" in obj:
        kwargs["k"] = float(obj.pop("k"))
    if obj:
        raise ConfigError(f"config: unknown keys {sorted(obj)}")
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        return parse_config(_read_json(path), path.parent)
    except FormatError:
        raise
    except (AttributeError, TypeError, ValueError) as exc:
        if isinstance(exc, InhomfindError):
            raise
        raise ConfigError(f"{path}: {exc}") from None

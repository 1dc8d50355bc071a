"""Command-line interface.

Subcommands: ``simulate``, ``invert``, ``estimate-order``, ``validate`` and
``residual-map``.  Every command accepts ``--config``, ``--seed`` and
``--out``; outputs are deterministic functions of inputs and seeds.

Exit codes: 0 on success, 2 when a dataset has fewer pairs than requested
scatterers, 1 on any other failure.  Failures print a single line
``inhomfind: error[<kind>]: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, InhomfindError, UnderdeterminedError
from .files import (
    ExperimentConfig,
    generate_pairs,
    load_config,
    load_dataset,
    load_scene,
    save_dataset,
    save_scene,
    scene_hash,
)
from .model import Scatterer, Scene, add_noise, simulate
from .objective import CandidateParams, project_batch, reduce
from .optimizer import InversionResult, global_search, order_scan
from .validity import assess, empirical_born_gap

log = logging.getLogger("inhomfind")


class CLIError(Exception):
    def __init__(self, kind, message, code=1):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", message)


def _fmt(x) -> str:
    return repr(float(x))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, allow_nan=True) + "\n")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.out is not None:
        cfg = replace(cfg, out=Path(args.out))
    return cfg


def _search(cfg: ExperimentConfig, args, M=None):
    search = cfg.search
    if args.seed is not None:
        search = replace(search, seed=args.seed)
    if M is not None:
        search = replace(search, M=M)
    return search


def _outdir(cfg) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg.out


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _config(args)
    overrides = {
        "scene": Path(args.scene) if args.scene else None,
        "k": args.k,
        "model": args.model,
        "quad_order": args.quad_order,
        "noise_level": args.noise,
        "noise_seed": args.seed,
    }
    cfg = replace(cfg, **{key: val for key, val in overrides.items() if val is not None})
    if cfg.scene is None:
        raise ConfigError("no scene file given (--scene or config 'scene')")
    scene = load_scene(cfg.scene)
    pairs = generate_pairs(cfg.array)
    data = simulate(scene, pairs, cfg.k, cfg.model, cfg.quad_order)
    meta = {"scene_sha256": scene_hash(scene)}
    if cfg.model == "volume-born":
        meta["quad_order"] = cfg.quad_order
    object.__setattr__(data, "meta", meta)
    data = add_noise(data, cfg.noise_level, cfg.noise_seed)
    out = _outdir(cfg) / "dataset.json"
    save_dataset(data, out)
    print(f"wrote {out} (J={data.J}, model={cfg.model}, noise={cfg.noise_level})")
    return 0


# ---------------------------------------------------------------------------
# invert
# ---------------------------------------------------------------------------


def _params_dict(p: CandidateParams) -> dict:
    return {"positions": p.positions.tolist(), "intensities": p.intensities.tolist()}


def _estimated_scene(p: CandidateParams) -> Scene:
    return Scene(tuple(Scatterer(tuple(z), 0.0, v) for z, v in zip(p.positions, p.intensities)))


def _result_dict(res: InversionResult, reduced, k) -> dict:
    out = {
        "M": res.params.M,
        "phi": res.phi_value,
        "phi_relative": res.phi_value / reduced.norm2 if reduced.norm2 else 0.0,
        "converged": res.converged,
        "evaluations": res.evaluations,
        "nothing_found": res.nothing_found,
        "estimate": _params_dict(res.params),
        "history": [{"start": z.tolist(), "phi": v} for z, v in res.history],
        "basins": [_params_dict(b) for b in res.basins],
    }
    try:
        out["validity"] = assess(_estimated_scene(res.params), k).as_dict()
    except InhomfindError as exc:
        out["validity"] = {"error": str(exc)}
    return out


def _report(res: InversionResult, reduced) -> str:
    lines = [f"J = {reduced.J} pairs, M = {res.params.M}"]
    if res.nothing_found:
        lines.append("no inhomogeneities detected")
    for m, (z, v) in enumerate(zip(res.params.positions, res.params.intensities)):
        lines.append(
            f"  scatterer {m}: z = ({z[0]:+.8f}, {z[1]:+.8f}, {z[2]:+.8f})  v = {v:+.8e}"
        )
    rel = res.phi_value / reduced.norm2 if reduced.norm2 else 0.0
    lines.append(f"phi = {res.phi_value:.6e} (relative {rel:.3e}), converged = {res.converged}")
    lines.append(f"starts refined: {len(res.history)}, distinct near-optimal basins: {len(res.basins)}")
    return "\n".join(lines) + "\n"


def cmd_invert(args) -> int:
    cfg = _config(args)
    data = load_dataset(args.dataset)
    search = _search(cfg, args, args.M)
    if data.J < search.M:
        raise UnderdeterminedError(f"dataset has J={data.J} pairs, fewer than M={search.M}")
    reduced = reduce(data)
    res = global_search(reduced, search)
    out = _outdir(cfg)
    result = _result_dict(res, reduced, data.k)
    _write_json(out / "result.json", result)
    try:
        save_scene(_estimated_scene(res.params), out / "estimate.json")
    except InhomfindError as exc:
        log.warning("estimated scene not written: %s", exc)
    report = _report(res, reduced)
    (out / "report.txt").write_text(report)
    sys.stdout.write(report)
    return 0


# ---------------------------------------------------------------------------
# estimate-order
# ---------------------------------------------------------------------------


def cmd_estimate_order(args) -> int:
    cfg = _config(args)
    data = load_dataset(args.dataset)
    M_max = args.M_max if args.M_max is not None else cfg.M_max
    drop = args.drop_threshold if args.drop_threshold is not None else cfg.drop_threshold
    if data.J < 1:
        raise UnderdeterminedError("empty dataset")
    reduced = reduce(data)
    scan = order_scan(reduced, _search(cfg, args), M_max, drop)
    best = scan.best
    lines = ["M  phi*            phi*/sum|f|^2"]
    for M, value in enumerate(scan.phis, start=1):
        rel = value / reduced.norm2 if reduced.norm2 else 0.0
        lines.append(f"{M:<2d} {value:.6e}  {rel:.6e}")
    lines.append(f"selected M = {scan.selected}")
    if best.nothing_found:
        lines.append("no inhomogeneities detected")
    report = "\n".join(lines) + "\n"
    out = _outdir(cfg)
    _write_json(
        out / "order.json",
        {
            "selected": scan.selected,
            "drop_threshold": drop,
            "phis": list(scan.phis),
            "estimate": _params_dict(best.params),
            "nothing_found": best.nothing_found,
        },
    )
    (out / "order.txt").write_text(report)
    sys.stdout.write(report)
    return 0


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    cfg = _config(args)
    scene = load_scene(args.scene)
    k = args.k if args.k is not None else cfg.k
    report = assess(scene, k, args.threshold)
    result = {"k": k, **report.as_dict()}
    if args.gap:
        result["empirical_born_gap"] = empirical_born_gap(scene, generate_pairs(cfg.array), k)
    _write_json(_outdir(cfg) / "validity.json", result)
    for key, value in result.items():
        print(f"{key:20s} {value}")
    return 0


# ---------------------------------------------------------------------------
# residual-map
# ---------------------------------------------------------------------------


def residual_map(reduced, positions, index, x1, x3, x2):
    """Projected misfit with scatterer ``index`` swept over an x1-x3 grid.

    Returns rows ``(x1, x3, phi)``, x1 outer; cells on or above the surface
    get ``nan``.
    """
    positions = np.asarray(positions, dtype=float)
    cells = [(a, c) for a in x1 for c in x3]
    below = [i for i, (_, c) in enumerate(cells) if c < 0]
    if not below:
        raise ConfigError("residual-map grid does not reach below the surface")
    trial = np.repeat(positions[None], len(below), axis=0)
    trial[:, index] = [(cells[i][0], x2, cells[i][1]) for i in below]
    values = np.full(len(cells), np.nan)
    for lo in range(0, len(below), 256):
        _, values[below[lo : lo + 256]] = project_batch(trial[lo : lo + 256], reduced)
    return [(a, c, v) for (a, c), v in zip(cells, values)]


def cmd_residual_map(args) -> int:
    cfg = _config(args)
    data = load_dataset(args.dataset)
    scene = load_scene(args.params)
    if not 0 <= args.index < scene.M:
        raise ConfigError(f"--index {args.index} out of range for M={scene.M}")
    if data.J < scene.M:
        raise UnderdeterminedError(f"dataset has J={data.J} pairs, fewer than M={scene.M}")
    if args.nx < 1 or args.nz < 1:
        raise ConfigError("grid counts must be >= 1")
    x2 = args.x2 if args.x2 is not None else scene.centers[args.index, 1]
    rows = residual_map(
        reduce(data),
        scene.centers,
        args.index,
        np.linspace(*args.x1, args.nx),
        np.linspace(*args.x3, args.nz),
        x2,
    )
    out = _outdir(cfg) / "residual_map.csv"
    with open(out, "w") as fh:
        fh.write("x1,x3,phi\n")
        for a, c, v in rows:
            fh.write(f"{_fmt(a)},{_fmt(c)},{_fmt(v)}\n")
    print(f"wrote {out} ({len(rows)} cells)")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="inhomfind", description="Locate small inhomogeneities from surface scattering data.")
    parser.add_argument("--version", action="version", version=f"inhomfind {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="experiment config file (JSON)")
        p.add_argument("--seed", type=int, default=None, help="noise seed (simulate) or search seed")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("simulate", help="synthesize a surface dataset")
    common(p)
    p.add_argument("--scene")
    p.add_argument("--k", type=float)
    p.add_argument("--model", choices=["point-born", "volume-born", "foldy"])
    p.add_argument("--quad-order", type=int)
    p.add_argument("--noise", type=float, help="noise level relative to the scattered-field RMS")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("invert", help="fit M scatterers to a dataset")
    common(p)
    p.add_argument("dataset")
    p.add_argument("--M", type=int)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("estimate-order", help="estimate the number of scatterers")
    common(p)
    p.add_argument("dataset")
    p.add_argument("--M-max", dest="M_max", type=int)
    p.add_argument("--drop-threshold", type=float)
    p.set_defaults(func=cmd_estimate_order)

    p = sub.add_parser("validate", help="Born-regime report for a scene")
    common(p)
    p.add_argument("scene")
    p.add_argument("--k", type=float)
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--gap", action="store_true", help="also compute the multiple-scattering gap on the array")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("residual-map", help="export a misfit slice as CSV")
    common(p)
    p.add_argument("dataset")
    p.add_argument("--params", required=True, help="scene file fixing the other scatterers")
    p.add_argument("--index", type=int, default=0, help="scatterer to sweep")
    p.add_argument("--x1", type=float, nargs=2, default=(-2.0, 2.0))
    p.add_argument("--x3", type=float, nargs=2, default=(-4.0, -0.5))
    p.add_argument("--x2", type=float, default=None)
    p.add_argument("--nx", type=int, default=41)
    p.add_argument("--nz", type=int, default=36)
    p.set_defaults(func=cmd_residual_map)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        return args.func(args)
    except CLIError as exc:
        err, code = (exc.kind, str(exc)), exc.code
    except UnderdeterminedError as exc:
        err, code = (exc.kind, str(exc)), 2
    except InhomfindError as exc:
        err, code = (exc.kind, str(exc)), 1
    except OSError as exc:
        err, code = ("io", str(exc)), 1
    message = " ".join(err[1].split())
    print(f"inhomfind: error[{err[0]}]: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

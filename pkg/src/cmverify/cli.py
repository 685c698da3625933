"""Command-line interface.

Subcommands: build-cm (CSV records -> confusion-matrix fixture), eval
(safety probabilities for one scenario), sweep (grid over variants,
environments, and speeds), simulate (sweep plus Monte Carlo columns),
export (explicit-state chain files).  Exit codes: 0 success, 1 validation
error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bundled import fixture_path
from .cm import (
    DistanceBands,
    DistanceParamCM,
    FixtureFormatError,
    ZeroColumnError,
    format_table,
    load_fixture,
    save_fixture,
)
from .chain import NumericError, build_chain, write_explicit_files
from .ingest import (
    DEFAULT_IOU_THRESHOLD,
    IngestError,
    build_class_cm,
    build_prop_cm,
    read_ground_truth_csv,
    read_predictions_csv,
)
from .mc import simulate
from .safety import (
    SPEC_NAMES,
    VARIANTS,
    bad_predicate,
    bad_states,
    prob_safe,
    sweep,
    sweep_grid,
    variant_cm,
)
from .scenario import ConfigError, env_name, load_config

DEFAULT_ENVS = (("ped",), ())
DEFAULT_V_MAX_LIST = (1, 2, 3)
DEFAULT_TRIALS = 100_000

SWEEP_HEADER = "variant,env,v_max,v0,prob"
SIM_HEADER = SWEEP_HEADER + ",mc_estimate,mc_stderr"


@dataclass(frozen=True)
class RunManifest:
    """Inputs of a run, recorded verbatim next to its outputs."""

    subcommand: str
    config: str | None
    fixtures: tuple[str, ...]
    out_dir: str
    seed: int | None
    version: str


def _write_manifest(manifest: RunManifest, out_dir: Path) -> None:
    payload = dataclasses.asdict(manifest)
    payload["fixtures"] = list(manifest.fixtures)
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    (out_dir / "manifest.json").write_text(text, encoding="utf-8")


def _resolve_cm_path(spec: str, config_path: str):
    """Fixture path from a config value: bundled:<name> or a filesystem
    path, relative paths taken from the config file's directory."""
    if spec.startswith("bundled:"):
        return fixture_path(spec[len("bundled:"):])
    p = Path(spec)
    if not p.is_absolute():
        p = Path(config_path).parent / p
    return p


def _load_cm(spec: str, config_path: str) -> DistanceParamCM:
    cm = load_fixture(_resolve_cm_path(spec, config_path))
    if not isinstance(cm, DistanceParamCM):
        raise ConfigError(f"{spec}: fixture is aggregated; need a banded matrix")
    return cm


def _require(raw: dict, key: str, config_path: str) -> str:
    value = raw.get(key)
    if not value:
        raise ConfigError(f"{config_path}: missing required key {key!r}")
    return value


def _sweep_inputs(args):
    cfg, raw = load_config(args.config)
    class_cm = _load_cm(_require(raw, "class_cm_path", args.config), args.config)
    prop_cm = _load_cm(_require(raw, "prop_cm_path", args.config), args.config)
    envs = raw.get("envs", [list(e) for e in DEFAULT_ENVS])
    if not isinstance(envs, list) or not all(isinstance(e, list) for e in envs):
        raise ConfigError("envs must be a list of class-name lists")
    v_max_list = raw.get("v_max_list", list(DEFAULT_V_MAX_LIST))
    return cfg, raw, class_cm, prop_cm, envs, v_max_list


def _emit(lines: list[str], out_dir: str | None, filename: str, manifest: RunManifest | None):
    text = "\n".join(lines) + "\n"
    if out_dir is None:
        sys.stdout.write(text)
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / filename).write_text(text, encoding="utf-8", newline="\n")
    if manifest is not None:
        _write_manifest(manifest, out)
    print(f"wrote {out / filename}")


def cmd_build_cm(args) -> int:
    gts = read_ground_truth_csv(args.gt)
    preds = read_predictions_csv(args.pred)
    classes = [c.strip() for c in args.classes.split(",")]
    bands = DistanceBands(tuple(float(s) for s in args.bands.split(",")))
    builder = build_prop_cm if args.mode == "prop" else build_class_cm
    dp = builder(gts, preds, classes, bands, args.iou_threshold)
    save_fixture(dp, args.out)
    print(f"wrote {args.out} ({len(gts)} objects, {len(preds)} predictions, {len(bands)} bands)")
    for k, m in enumerate(dp.per_band):
        print(f"\nband {k} (d <= {bands.edges[k]:g} m)")
        print(format_table(m))
    return 0


def cmd_eval(args) -> int:
    cfg, raw = load_config(args.config)
    cm = _load_cm(_require(raw, "cm_path", args.config), args.config)
    chain = build_chain(cfg, cm)
    lines = ["spec,probability,bad_count,transient_count,residual"]
    for spec in SPEC_NAMES:
        vacuous = bad_predicate(spec, cfg) is None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # vacuity already reported below
            bad = bad_states(chain, spec)
        result = prob_safe(chain, bad)
        note = " (vacuous for this environment)" if vacuous else ""
        print(f"P({spec}) = {result.probability:.6f}{note}")
        if args.verbose:
            print(
                f"  bad={len(bad)} transient={result.transient_count} "
                f"absorbing={result.absorbing_count} residual={result.residual:.3g} "
                f"solver={result.solver}"
            )
        lines.append(
            f"{spec},{result.probability:.17g},{len(bad)},{result.transient_count},{result.residual:.17g}"
        )
    manifest = RunManifest(
        "eval", args.config, (raw["cm_path"],), str(args.out), args.seed, __version__
    )
    if args.out is not None:
        _emit(lines, args.out, "eval.csv", manifest)
    return 0


def _sweep_lines(rows) -> list[str]:
    return [SWEEP_HEADER] + [
        f"{r.variant},{r.env},{r.v_max},{r.v0},{r.prob:.17g}" for r in rows
    ]


def _print_sweep_summary(rows) -> None:
    by_key = {(r.variant, r.env, r.v_max, r.v0): r.prob for r in rows}
    points = sorted({(r.env, r.v_max, r.v0) for r in rows})
    print(f"{'env':<6} {'v_max':>5} {'v0':>3}  " + "  ".join(f"{v:>10}" for v in VARIANTS))
    for env, v_max, v0 in points:
        cells = "  ".join(f"{by_key[(v, env, v_max, v0)]:>10.6f}" for v in VARIANTS)
        print(f"{env:<6} {v_max:>5} {v0:>3}  {cells}")
    violations = []
    for (variant, env, v_max, v0), p in sorted(by_key.items()):
        prev = by_key.get((variant, env, v_max, v0 - 1))
        if prev is not None and p > prev + 1e-12:
            violations.append(f"{variant}/{env}/v_max={v_max}: v0={v0 - 1}->{v0} rises {prev:.6f}->{p:.6f}")
    if violations:
        print("monotonicity violations (probability rising with v0):")
        for v in violations:
            print(f"  {v}")
    else:
        print("monotonicity: probability non-increasing in v0 at every grid point")
    for family in ("class", "prop"):
        for (variant, env, v_max, v0), p in sorted(by_key.items()):
            if variant != f"{family}_dist" or v0 != 1:
                continue
            agg = by_key.get((family, env, v_max, 1))
            if agg is None or agg == 0.0:
                continue
            ratio = p / agg
            note = " (matches the reported two-fold gain)" if ratio >= 1.5 else ""
            print(
                f"distance/aggregated ratio, {family}, env={env}, v_max={v_max}, v0=1: "
                f"{ratio:.3f}{note}"
            )


def _print_per_spec_breakdown(base_cfg, class_cm, prop_cm, envs, v_max_list) -> None:
    for variant in VARIANTS:
        mode, cm = variant_cm(variant, class_cm, prop_cm)
        for point in sweep_grid(dataclasses.replace(base_cfg, mode=mode), envs, v_max_list):
            chain = build_chain(point, cm)
            parts = []
            for spec in SPEC_NAMES:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")  # vacuous specs print as 1
                    bad = bad_states(chain, spec)
                result = prob_safe(chain, bad)
                parts.append(f"{spec}={result.probability:.6f} (bad={len(bad)})")
            print(
                f"{variant} env={env_name(point.env)} v_max={point.v_max} "
                f"v0={point.v0}: " + "  ".join(parts)
            )


def cmd_sweep(args) -> int:
    cfg, raw, class_cm, prop_cm, envs, v_max_list = _sweep_inputs(args)
    rows = sweep(cfg, class_cm, prop_cm, envs, v_max_list)
    manifest = RunManifest(
        "sweep", args.config, (raw["class_cm_path"], raw["prop_cm_path"]),
        str(args.out), args.seed, __version__,
    )
    _emit(_sweep_lines(rows), args.out, "sweep.csv", manifest)
    if args.verbose:
        _print_per_spec_breakdown(cfg, class_cm, prop_cm, envs, v_max_list)
    _print_sweep_summary(rows)
    return 0


def cmd_simulate(args) -> int:
    cfg, raw, class_cm, prop_cm, envs, v_max_list = _sweep_inputs(args)
    trials = args.trials if args.trials is not None else raw.get("trials", DEFAULT_TRIALS)
    seed = args.seed if args.seed is not None else raw.get("seed", 0)
    lines = [SIM_HEADER]
    worst = 0.0
    for variant in VARIANTS:
        mode, cm = variant_cm(variant, class_cm, prop_cm)
        for point in sweep_grid(dataclasses.replace(cfg, mode=mode), envs, v_max_list):
            chain = build_chain(point, cm)
            analytic = prob_safe(chain, bad_states(chain, "phi_all")).probability
            est = simulate(point, cm, "phi_all", trials=trials, seed=seed)
            lines.append(
                f"{variant},{env_name(point.env)},{point.v_max},{point.v0},"
                f"{analytic:.17g},{est.estimate:.17g},{est.std_error:.17g}"
            )
            gap = abs(analytic - est.estimate)
            if est.std_error > 0:
                worst = max(worst, gap / est.std_error)
            elif gap > 0:
                worst = float("inf")
            if args.verbose:
                print(
                    f"{variant} env={env_name(point.env)} v_max={point.v_max} v0={point.v0}: "
                    f"analytic={analytic:.6f} mc={est.estimate:.6f} +/- {est.std_error:.6f}"
                )
    manifest = RunManifest(
        "simulate", args.config, (raw["class_cm_path"], raw["prop_cm_path"]),
        str(args.out), seed, __version__,
    )
    _emit(lines, args.out, "simulate.csv", manifest)
    print(f"largest |analytic - estimate| = {worst:.2f} standard errors ({trials} trials, seed {seed})")
    return 0


def cmd_export(args) -> int:
    if args.out is None:
        raise ConfigError("export requires --out <directory>")
    cfg, raw = load_config(args.config)
    cm = _load_cm(_require(raw, "cm_path", args.config), args.config)
    chain = build_chain(cfg, cm)
    bad = bad_states(chain, "phi_all")
    paths = write_explicit_files(chain, bad, args.out)
    manifest = RunManifest(
        "export", args.config, (raw["cm_path"],), str(args.out), args.seed, __version__
    )
    _write_manifest(manifest, Path(args.out))
    for kind, p in paths.items():
        print(f"wrote {kind}: {p}")
    print(f"{len(chain.states)} states, {sum(len(r) for r in chain.trans)} transitions, {len(bad)} bad")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmverify",
        description="Detection confusion matrices and closed-loop safety probabilities",
    )
    parser.add_argument("--version", action="version", version=f"cmverify {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario JSON config")
    common.add_argument("--out", default=None, help="output directory (default: print CSV to stdout)")
    common.add_argument("--seed", type=int, default=None, help="random seed override")
    common.add_argument("--verbose", action="store_true")

    p = sub.add_parser("build-cm", help="build a confusion-matrix fixture from CSV records")
    p.add_argument("--gt", required=True, help="ground-truth CSV")
    p.add_argument("--pred", required=True, help="prediction CSV")
    p.add_argument("--mode", choices=("class", "prop"), default="class")
    p.add_argument("--bands", default="10,20,30,40,50,60,70,80,90,100",
                   help="comma-separated band edges in meters")
    p.add_argument("--classes", default="ped,obs", help="comma-separated object classes")
    p.add_argument("--iou-threshold", type=float, default=DEFAULT_IOU_THRESHOLD)
    p.add_argument("--out", required=True, help="fixture file to write")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_build_cm)

    p = sub.add_parser("eval", parents=[common], help="safety probabilities for one scenario")
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("sweep", parents=[common], help="variant/environment/speed grid")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("simulate", parents=[common], help="sweep with Monte Carlo cross-check")
    p.add_argument("--trials", type=int, default=None, help=f"trials per grid point (default {DEFAULT_TRIALS})")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("export", parents=[common], help="write explicit-state chain files")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ZeroColumnError, NumericError, np.linalg.LinAlgError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2
    except (ConfigError, IngestError, FixtureFormatError, ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``mmnr <subcommand> --config run.toml``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig, desk_config, load_config
from .ingest.archive import load_arrays
from .ingest.bundle import BundleError
from .ingest.synth import SynthSpec, generate_synthetic_dataset
from .pipeline import STAGES, Run, StageError, run_pipeline
from .tensor import DegenerateFeature, NumericFailure

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("mmnr")


def exit_code(err: BaseException) -> int:
    if isinstance(err, StageError):
        err = err.cause
    if isinstance(err, ConfigError):
        return EXIT_CONFIG
    # order matters: DegenerateFeature is a ValueError but means a numeric dead end
    if isinstance(err, (NumericFailure, DegenerateFeature, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(err, (BundleError, OSError, ValueError, KeyError)):
        return EXIT_DATA
    raise err


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else desk_config() if args.desk else PipelineConfig()
    over = {}
    if args.threads is not None:
        over["threads"] = args.threads
    if args.seed is not None:
        over["seed"] = args.seed
    if args.data is not None:
        over["data"] = {"root": str(Path(args.data).resolve())}
    if args.noise is not None:
        over["data"] = {**over.get("data", {}), "noise": args.noise}
    if args.no_denoise:
        over["stage2"] = {"enabled": False}
    try:
        return cfg.replace(**over) if over else cfg
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def cmd_gen_data(args) -> int:
    try:
        spec = SynthSpec(classes=args.classes, n_train=args.train, n_test=args.test,
                         modality=args.modality, defect_strength=args.strength)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    out = generate_synthetic_dataset(spec, args.seed or 0, args.out, args.threads or 1)
    print(json.dumps({name: {s: len(m.samples) for s, m in d.items()} for name, d in out.items()}, sort_keys=True))
    return EXIT_OK


def cmd_stage(stage: str):
    def run(args) -> int:
        r = Run(_config(args), args.run_dir)
        r.dir.mkdir(parents=True, exist_ok=True)
        out = r.run_stage(stage)
        print(json.dumps({"run_dir": str(r.dir), "stage": stage,
                          "summary": out if stage == "eval" else sorted(out)}, sort_keys=True, default=str))
        return EXIT_OK
    return run


def cmd_run(args) -> int:
    cfg = _config(args)
    r = Run(cfg, args.run_dir)
    res = run_pipeline(cfg, r.dir)
    print(json.dumps({"run_dir": str(r.dir), "mean": res["mean"], "noise": res["noise"]}, sort_keys=True))
    return EXIT_OK


def cmd_render(args) -> int:
    from .heatmap import render_heatmap

    src = Path(args.map)
    arrays = load_arrays(src)
    key = args.key if args.key else ("s_pixel" if "s_pixel" in arrays else sorted(arrays)[0])
    if key not in arrays:
        raise KeyError(f"{src} has no array {key!r}; found {sorted(arrays)}")
    a = np.asarray(arrays[key], dtype=np.float64)
    out = render_heatmap(a, args.out or src.with_suffix(".png"), args.scale)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmnr", description="Noise-resistant RGB + 3D anomaly detection")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--desk", action="store_true", help="start from the desk-scale preset instead of defaults")
        sp.add_argument("--data", help="dataset root (overrides data.root)")
        sp.add_argument("--noise", choices=("clean", "overlap", "non_overlap"))
        sp.add_argument("--no-denoise", action="store_true", help="skip reference selection and sample removal")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--run-dir", help="explicit run directory (default <out_dir>/<config hash>)")

    g = sub.add_parser("gen-data", help="write the seeded synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=int, default=5)
    g.add_argument("--train", type=int, default=100)
    g.add_argument("--test", type=int, default=40)
    g.add_argument("--modality", default="both", choices=("rgb-only", "3d-only", "both"))
    g.add_argument("--strength", type=float, default=1.0, help="defect strength multiplier")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int)
    g.set_defaults(func=cmd_gen_data)

    for stage in STAGES:
        sp = sub.add_parser(stage, help=f"run the {stage} stage into the run directory")
        common(sp)
        sp.set_defaults(func=cmd_stage(stage))

    r = sub.add_parser("run", help="every stage in order")
    common(r)
    r.set_defaults(func=cmd_run)

    h = sub.add_parser("render", help="PNG heatmap of a stored map")
    h.add_argument("map", help=".mmna archive holding the map")
    h.add_argument("--key", help="array name inside the archive (default s_pixel)")
    h.add_argument("--out")
    h.add_argument("--scale", type=int, default=8)
    h.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - mapped to an exit code or re-raised
        code = exit_code(e)
        print(f"mmnr: error: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points: generate, run, sweep, compare, validate.

Exit codes: 0 on success, 1 for usage errors, 2 for data errors (malformed
input files, inconsistent configs, checkpoint mismatches).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import formats
from .errors import AlboxError, ParseError
from .harness import (
    compare_runs,
    config_from_dict,
    run_experiment,
    theta_sweep,
)
from .synth import GenConfig, NoiseConfig, gen_pool

USAGE_EXIT = 1
DATA_EXIT = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; this tool reserves 2 for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="albox", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic pool to disk")
    gen.add_argument("--config", required=True, help="JSON config (synthetic pool section)")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--seed", type=int, default=None, help="override the generator seed")

    run = sub.add_parser("run", help="run a multi-cycle experiment")
    run.add_argument("--config", required=True, help="experiment JSON config")
    run.add_argument("--out", default=None, help="override the config's output_dir")
    run.add_argument("--seed", type=int, default=None, help="run only this seed")
    run.add_argument("--resume", action="store_true", help="continue from checkpoints")
    run.add_argument(
        "--stop-after-cycle",
        type=int,
        default=None,
        metavar="K",
        help="stop after K completed cycles (for controlled interruption)",
    )

    sweep = sub.add_parser("sweep", help="rerun the experiment across thresholds")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--out", default=None)
    sweep.add_argument(
        "--thetas", default="0.05,0.10,0.15", help="comma-separated threshold values"
    )

    cmp = sub.add_parser("compare", help="tabulate runs against the first one")
    cmp.add_argument("dirs", nargs="+", help="experiment output directories")
    cmp.add_argument("--out", default=None, help="write the CSV here (default stdout)")

    val = sub.add_parser("validate", help="check input files for format errors")
    val.add_argument(
        "--format",
        required=True,
        choices=["dota", "predictions", "results", "features", "config"],
    )
    val.add_argument("--classes", default=None, help="comma-separated class names (dota)")
    val.add_argument("files", nargs="+")
    return parser


def _load_config(path: str, out_override: str | None, seed_override: int | None):
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise AlboxError(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc.msg}", line=exc.lineno)
    output_dir = out_override or raw.get("output_dir")
    if not output_dir:
        raise AlboxError("no output directory: pass --out or set output_dir in the config")
    config = config_from_dict(raw, str(output_dir))
    if seed_override is not None:
        config = replace(config, seeds=(seed_override,))
    return config


def _gen_config_from_file(path: str, seed_override: int | None) -> GenConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise AlboxError(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc.msg}", line=exc.lineno)
    section = raw
    if "pool" in section:
        section = section["pool"]
    if "synthetic" in section:
        section = section["synthetic"]
    try:
        section = dict(section)
        noise = NoiseConfig(**section.pop("noise", {}))
        if "objects_per_image" in section:
            section["objects_per_image"] = tuple(section["objects_per_image"])
        if "box_size_range" in section:
            section["box_size_range"] = tuple(section["box_size_range"])
        config = GenConfig(noise=noise, **section)
    except (TypeError, ValueError) as exc:
        raise AlboxError(f"invalid synthetic pool config: {exc}")
    if seed_override is not None:
        config = replace(config, seed=seed_override)
    return config


def _cmd_generate(args) -> int:
    config = _gen_config_from_file(args.config, args.seed)
    bundle = gen_pool(config)
    out = Path(args.out)
    gt_dir = out / "gt"
    gt_dir.mkdir(parents=True, exist_ok=True)
    class_list = [f"class_{k}" for k in range(config.num_classes)]
    (out / "classes.txt").write_text("\n".join(class_list) + "\n")
    for image_id in sorted(bundle.gt_by_image):
        text = formats.serialize_dota(bundle.gt_by_image[image_id], class_list)
        (gt_dir / f"{image_id:06d}.txt").write_text(text)
    predictions = [
        p
        for image_id in sorted(bundle.pool.images)
        for p in bundle.pool.images[image_id].predictions
    ]
    (out / "predictions.jsonl").write_text(formats.write_predictions(predictions))
    (out / "image_features.jsonl").write_text(
        formats.write_image_features(bundle.image_features)
    )
    total_objects = sum(len(g) for g in bundle.gt_by_image.values())
    print(
        f"wrote {config.num_images} images, {total_objects} objects, "
        f"{len(predictions)} predictions to {out}"
    )
    return 0


def _cmd_run(args) -> int:
    config = _load_config(args.config, args.out, args.seed)
    reports = run_experiment(config, resume=args.resume, stop_after=args.stop_after_cycle)
    print(f"completed {len(reports)} cycle reports in {config.output_dir}")
    return 0


def _cmd_sweep(args) -> int:
    try:
        thetas = tuple(float(v) for v in args.thetas.split(",") if v)
    except ValueError:
        raise AlboxError(f"cannot parse --thetas {args.thetas!r}")
    config = _load_config(args.config, args.out, None)
    reports = theta_sweep(config, thetas=thetas)
    print(f"swept {len(thetas)} thresholds, {len(reports)} cycle reports in {config.output_dir}")
    return 0


def _cmd_compare(args) -> int:
    table = compare_runs(args.dirs)
    if args.out:
        Path(args.out).write_text(table)
        print(f"wrote comparison to {args.out}")
    else:
        sys.stdout.write(table)
    return 0


def _cmd_validate(args) -> int:
    classes = args.classes.split(",") if args.classes else None
    failures = 0
    for name in args.files:
        path = Path(name)
        try:
            text = path.read_text()
            if args.format == "dota":
                if classes is None:
                    raise AlboxError("--classes is required for dota validation")
                records = formats.parse_dota_file(text, classes)
            elif args.format == "predictions":
                records = formats.load_predictions(text)
            elif args.format == "results":
                records = formats.read_query_results(text)
            elif args.format == "features":
                records = formats.read_image_features(text)
            else:
                config_from_dict(json.loads(text), output_dir="unused")
                records = [None]
            print(f"{name}: ok ({len(records)} records)")
        except OSError as exc:
            print(f"{name}: {exc}", file=sys.stderr)
            failures += 1
        except json.JSONDecodeError as exc:
            print(f"{name}: line {exc.lineno}: {exc.msg}", file=sys.stderr)
            failures += 1
        except AlboxError as exc:
            print(f"{name}: {exc}", file=sys.stderr)
            failures += 1
    return DATA_EXIT if failures else 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse signals usage errors (and --help) this way
        return int(exc.code or 0)
    handlers = {
        "generate": _cmd_generate,
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "compare": _cmd_compare,
        "validate": _cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except AlboxError as exc:
        print(f"albox {args.command}: {exc}", file=sys.stderr)
        return DATA_EXIT
    except OSError as exc:
        print(f"albox {args.command}: {exc}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())

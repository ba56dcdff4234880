"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 I/O or file-format error,
3 failed numerical check.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import costmodel
from .analysis import redundancy_profile
from .checks import REGISTRY, run_checks
from .encoder import EncoderConfig, init_encoder_params, proscale_encode
from .errors import TensorFormatError, ValidationError
from .pyramid import SCALE_NAMES, build_pyramid, smooth_pyramid
from .tensorfile import atomic_write, read_tensor, write_tensor

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_CHECK = 0, 1, 2, 3

_int = {"type": "integer"}
RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "p1": {**_int, "minimum": 0},
        "p2": {**_int, "minimum": 0},
        "p3": {**_int, "minimum": 0},
        "image_height": {**_int, "minimum": 32},
        "image_width": {**_int, "minimum": 32},
        "channels": {**_int, "minimum": 1},
        "heads": {**_int, "minimum": 1},
        "points": {**_int, "minimum": 1},
        "ffn_dim": {**_int, "minimum": 1},
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "trc_enabled": {"type": "boolean"},
        "lpe_fusion": {"type": "boolean"},
        "seed": _int,
        "baseline_layers": {**_int, "minimum": 1},
        "embedding": {"enum": ["lpe", "conv"]},
        "pool": {"enum": ["max", "avg"]},
        "float64": {"type": "boolean"},
        "format": {"enum": ["json", "csv"]},
    },
}

DEFAULTS = {
    "p1": 1, "p2": 1, "p3": 1,
    "image_height": 800, "image_width": 1333,
    "channels": 256, "heads": 8, "points": 4, "ffn_dim": 1024, "epsilon": 0.1,
    "trc_enabled": True, "lpe_fusion": True, "seed": 0,
    "baseline_layers": 6, "embedding": "lpe", "pool": "max", "float64": False, "format": "json",
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}", EXIT_VALIDATION)


def parse_triple(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    try:
        values = tuple(int(p) for p in parts)
    except ValueError:
        raise ValidationError(f"config {text!r} must be three comma-separated integers") from None
    if len(values) != 3 or min(values) < 0:
        raise ValidationError(f"config {text!r} must be three non-negative integers p1,p2,p3")
    return values


def load_run_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read run config: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"run config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(doc, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ValidationError(f"run config: {exc.message}") from exc
    return doc


def resolve(args) -> dict:
    """Merge built-in defaults, the optional run config and explicit flags."""
    settings = dict(DEFAULTS)
    if getattr(args, "run_config", None):
        settings.update(load_run_config(args.run_config))
    flags = {
        "image_height": getattr(args, "height", None),
        "image_width": getattr(args, "width", None),
        "channels": getattr(args, "channels", None),
        "heads": getattr(args, "heads", None),
        "points": getattr(args, "points", None),
        "ffn_dim": getattr(args, "ffn", None),
        "epsilon": getattr(args, "epsilon", None),
        "seed": getattr(args, "seed", None),
        "baseline_layers": getattr(args, "baseline_layers", None),
        "embedding": getattr(args, "embedding", None),
        "pool": getattr(args, "pool", None),
        "format": getattr(args, "format", None),
    }
    settings.update({k: v for k, v in flags.items() if v is not None})
    if getattr(args, "config", None) is not None:
        settings["p1"], settings["p2"], settings["p3"] = parse_triple(args.config)
    if getattr(args, "no_trc", False):
        settings["trc_enabled"] = False
    if getattr(args, "no_lpe_fusion", False):
        settings["lpe_fusion"] = False
    if getattr(args, "float64", False):
        settings["float64"] = True
    return settings


def encoder_config(s: dict) -> EncoderConfig:
    return EncoderConfig(
        s["p1"], s["p2"], s["p3"], s["channels"], s["heads"], s["points"], s["ffn_dim"],
        s["epsilon"], s["trc_enabled"], s["lpe_fusion"], s["seed"],
    )


def cost_dims(s: dict) -> costmodel.CostDims:
    return costmodel.CostDims(
        s["image_height"], s["image_width"], s["channels"], s["heads"], s["points"], s["ffn_dim"],
        s["baseline_layers"],
    )


def emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        atomic_write(out, text.encode())
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_IO) from exc


def _csv(rows, header) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# commands

PLAN_CSV_HEADER = [
    "p1", "p2", "p3", "K1", "K2", "K3", "stage1_macs", "stage2_macs", "stage3_macs",
    "embedding_macs", "trc_macs", "total_macs", "baseline_total", "reduction_pct",
]


def plan_report(s: dict) -> costmodel.FlopsReport:
    return costmodel.plan(encoder_config(s), cost_dims(s), s["embedding"])


def cmd_plan(args) -> int:
    s = resolve(args)
    report = plan_report(s)
    if s["format"] == "csv":
        d = report.to_dict()
        row = [d["p1"], d["p2"], d["p3"], d["tokens"]["K1"], d["tokens"]["K2"], d["tokens"]["K3"],
               *(st["macs"] for st in d["macs"]["stages"]), d["macs"]["embedding"], d["macs"]["trc"],
               d["macs"]["total"], d["baseline_total"], d["reduction_pct"]]
        emit(_csv([row], PLAN_CSV_HEADER), args.out)
    else:
        emit(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    s = resolve(args)
    triples = [parse_triple(t.strip()) for t in args.configs.split(";") if t.strip()]
    if not triples:
        raise ValidationError("--configs lists no configurations")
    rows = []
    for p in triples:
        s["p1"], s["p2"], s["p3"] = p
        d = plan_report(s).to_dict()
        rows.append([*p, d["macs"]["total"], d["reduction_pct"]])
    emit(_csv(rows, ["p1", "p2", "p3", "total_macs", "reduction_pct"]), args.out)
    return EXIT_OK


def _load_inputs(directory: Path, dtype) -> dict[str, np.ndarray]:
    maps = {}
    for name in SCALE_NAMES:
        candidates = [directory / f"{name}.pstf", directory / name]
        path = next((c for c in candidates if c.is_file()), None)
        if path is None:
            raise CliError(f"missing tensor file for {name} in {directory}", EXIT_IO)
        try:
            maps[name] = read_tensor(path).astype(dtype)
        except OSError as exc:
            raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
        if maps[name].ndim != 3:
            raise ValidationError(f"{name}: expected an (H, W, C) tensor, got shape {maps[name].shape}")
    return maps


def cmd_encode(args) -> int:
    s = resolve(args)
    dtype = np.float64 if s["float64"] else np.float32
    if args.input is None and not args.synthetic:
        raise ValidationError("encode needs --synthetic or --input DIR")
    if args.input is not None:
        maps = _load_inputs(Path(args.input), dtype)
        h1, w1, c = maps["s1"].shape
        height = args.height if args.height is not None else 4 * h1
        width = args.width if args.width is not None else 4 * w1
        if args.channels is None:
            s["channels"] = c
        pyramid = build_pyramid(height, width, s["channels"], tensors=maps, dtype=dtype)
    else:
        if args.height is None or args.width is None:
            raise ValidationError("--synthetic needs --height and --width")
        pyramid = build_pyramid(s["image_height"], s["image_width"], s["channels"], seed=s["seed"], dtype=dtype)
    config = encoder_config(s)
    params = init_encoder_params(config, dtype=dtype)
    out = proscale_encode(pyramid, config, params, pool=s["pool"])

    out_dir = Path(args.out or ".")
    stats = {
        "config": {k: getattr(config, k) for k in config.__dataclass_fields__},
        "dtype": np.dtype(dtype).name,
        "image": [pyramid.image_height, pyramid.image_width],
        "tokens": pyramid.counts.as_dict(),
        "stage_lengths": list(out.stage_lengths),
        "update_counts": list(out.update_counts),
        "shapes": {
            "s_prime3": list(out.s_out.shape),
            "e_emb": list(out.e_emb.shape),
            **{name: list(t.shape) for name, t in out.per_scale.items()},
        },
        "stage_norms": [float(np.linalg.norm(t.data.astype(np.float64))) for t in out.stage_outputs],
        "e_emb_norm": float(np.linalg.norm(out.e_emb.data.astype(np.float64))),
    }
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_tensor(out_dir / "s_prime3.pstf", out.s_out.data)
        write_tensor(out_dir / "e_emb.pstf", out.e_emb.data)
        atomic_write(out_dir / "stats.json", (json.dumps(stats, sort_keys=True, indent=2) + "\n").encode())
    except OSError as exc:
        raise CliError(f"cannot write outputs to {out_dir}: {exc}", EXIT_IO) from exc
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.op == "all":
        names = list(REGISTRY)
    elif args.op in REGISTRY:
        names = [args.op]
    else:
        raise ValidationError(f"unknown op {args.op!r}; choose from {', '.join(REGISTRY)} or all")
    if args.tolerance <= 0 or args.seeds < 1:
        raise ValidationError("--tolerance must be positive and --seeds at least 1")
    seeds = range(args.seed, args.seed + args.seeds)
    failed = []
    for name in names:
        for seed in seeds:
            report = REGISTRY[name](seed, args.tolerance)
            print(f"seed={seed} {report.line()}")
            if not report.passed:
                failed.append(f"{name}@seed{seed}")
    if failed:
        print(f"gradient check failed: {' '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    print(f"all {len(names) * len(seeds)} checks passed")
    return EXIT_OK


def cmd_redundancy(args) -> int:
    if args.input is None and not args.synthetic_smooth:
        raise ValidationError("redundancy needs --input FILE or --synthetic-smooth")
    if args.input is not None:
        try:
            tokens = read_tensor(args.input)
        except OSError as exc:
            raise CliError(f"cannot read {args.input}: {exc}", EXIT_IO) from exc
        if tokens.ndim != 2:
            raise ValidationError(f"expected an (N, C) tensor, got shape {tokens.shape}")
        profile = redundancy_profile(tokens, args.max_distance)
        text = _csv(profile.rows(), ["distance", "mean_similarity", "sample_count"])
    else:
        pyramid = smooth_pyramid(args.height, args.width, args.channels, seed=args.seed)
        scales = ("s2", "s3", "s4") if args.scale == "all" else (args.scale,)
        profiles = [redundancy_profile(pyramid.tokens(sc), args.max_distance, sc) for sc in scales]
        if len(profiles) == 1:
            text = _csv(profiles[0].rows(), ["distance", "mean_similarity", "sample_count"])
        else:
            rows = [(p.scale, *row) for p in profiles for row in p.rows()]
            text = _csv(rows, ["scale", "distance", "mean_similarity", "sample_count"])
    emit(text, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_dims(p, image=True):
    if image:
        p.add_argument("--height", type=int)
        p.add_argument("--width", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--points", type=int)
    p.add_argument("--ffn", type=int)
    p.add_argument("--run-config", help="JSON file of default settings; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="proscale", description="Progressive token-length encoder toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("plan", help="MAC report for one (p1,p2,p3) configuration")
    p.add_argument("--config", required=True, help="p1,p2,p3")
    _add_dims(p)
    p.add_argument("--baseline-layers", type=int)
    p.add_argument("--embedding", choices=["lpe", "conv"])
    p.add_argument("--no-trc", action="store_true")
    p.add_argument("--format", choices=["json", "csv"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("sweep", help="CSV of MAC totals for several configurations")
    p.add_argument("--configs", required=True, help='"a,b,c;d,e,f;..."')
    _add_dims(p)
    p.add_argument("--baseline-layers", type=int)
    p.add_argument("--embedding", choices=["lpe", "conv"])
    p.add_argument("--no-trc", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("encode", help="run the encoder on synthetic or file-based features")
    p.add_argument("--config", required=True, help="p1,p2,p3")
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--input", help="directory holding s1..s4 tensor files")
    _add_dims(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--pool", choices=["max", "avg"])
    p.add_argument("--no-trc", action="store_true")
    p.add_argument("--no-lpe-fusion", action="store_true")
    p.add_argument("--float64", action="store_true")
    p.add_argument("--out", help="output directory (default: current directory)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every differentiable op")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--op", default="all")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("redundancy", help="neighbour cosine-similarity profile")
    p.add_argument("--input", help="(N, C) tensor file")
    p.add_argument("--synthetic-smooth", action="store_true")
    p.add_argument("--height", type=int, default=800)
    p.add_argument("--width", type=int, default=1333)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", choices=["all", *SCALE_NAMES], default="all")
    p.add_argument("--max-distance", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_redundancy)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except TensorFormatError as exc:
        print(f"error: malformed tensor file: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

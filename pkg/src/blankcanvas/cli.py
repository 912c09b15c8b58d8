"""Command-line interface: ``blankcanvas protect|detect|bench|inspect``.

Every config key can be given in a TOML file (``--config``) and overridden
on the command line as ``--key value`` (dashes and underscores are
interchangeable). Exit codes: 0 success, 1 usage or config error, 2 I/O
error, 3 backend error, 4 non-convergence.
"""

import argparse
import glob
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .attack import blank_tolerance, protect
from .bench import make_fixtures, run_ablation, ablation_configs
from .config import ATTACK_KEYS, DETECT_KEYS, GENERAL_DEFAULTS, CliConfig, read_values
from .exceptions import BackendUnavailable, ConfigError, DivergenceError, ImageIOError
from .io import load_image, save_image, save_map, save_mask, save_overlay
from .localize import blank_fraction, detect_tamper
from .oracle import forward, get_backend

log = logging.getLogger("blankcanvas")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_BACKEND, EXIT_NONCONVERGED = 0, 1, 2, 3, 4
CONFIG_KEYS = ATTACK_KEYS | DETECT_KEYS | set(GENERAL_DEFAULTS)
_KEY_LOOKUP = {k.lower().replace("_", "-"): k for k in CONFIG_KEYS}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# keys with dedicated argparse options
_NATIVE_KEYS = {"seed", "jobs"}


def split_overrides(argv):
    """Separate ``--key value`` config overrides from the remaining arguments.

    Returns ``(remaining, {"key": "value"})``; key lookup ignores case and
    treats dashes and underscores alike.
    """
    rest, out, i = [], {}, 0
    while i < len(argv):
        tok = argv[i]
        name, eq, value = tok[2:].partition("=") if tok.startswith("--") else ("", "", "")
        key = _KEY_LOOKUP.get(name.lower().replace("_", "-"))
        if key is None or key in _NATIVE_KEYS:
            rest.append(tok)
            i += 1
            continue
        if not eq:
            if i + 1 >= len(argv):
                raise UsageError(f"--{name} needs a value")
            i += 1
            value = argv[i]
        out[key] = value
        i += 1
    return rest, out


def _build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = _Parser(
        prog="blankcanvas",
        description="Protect images against undetected edits and localise tampering.",
        epilog="Any config key may be overridden with --key value, e.g. --T 100 --C -19.5.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("protect", parents=[common], help="write a protected PNG")
    p.add_argument("input", help="image path, directory or glob")
    p.add_argument("output", help="output PNG, or a directory for batch input")
    p.add_argument("--jobs", type=int, help="worker processes for batch input")

    p = sub.add_parser("detect", parents=[common], help="localise tampering")
    p.add_argument("input", help="image path, directory or glob")
    p.add_argument("output_prefix", help="output prefix, or a directory for batch input")
    p.add_argument("--jobs", type=int, help="worker processes for batch input")

    p = sub.add_parser("bench", parents=[common], help="run the ablation harness")
    p.add_argument("fixtures_dir")
    p.add_argument("report", help="BenchReport JSON path")
    p.add_argument("--generate-fixtures", action="store_true",
                   help="write seeded procedural fixtures into fixtures_dir first")
    p.add_argument("--seed", type=int, help="fixture, tamper and attack seed")
    p.add_argument("--csv", help="optional flat CSV export")
    p.add_argument("--repeats", type=int, default=4, help="tamper cases per fixture")

    p = sub.add_parser("inspect", parents=[common], help="print confidence-map statistics")
    p.add_argument("input")
    p.add_argument("--dump", help="also write the map as <dump>.f32 + <dump>.json")
    return parser


def resolve(config_path, overrides):
    """Validated config plus a backend handle.

    When ``C`` is not set explicitly the backend's recommended blank
    constant is used for both protection and detection.
    """
    values = read_values(config_path, overrides)
    cfg = CliConfig.from_mapping(values)
    backend = make_backend(cfg)
    if "C" not in values and backend.blank_constant is not None:
        cfg.attack = cfg.attack.replace(C=backend.blank_constant)
        cfg.detect = cfg.detect.replace(C=backend.blank_constant)
    return cfg, backend


def make_backend(cfg):
    return get_backend(cfg.backend, toy_seed=cfg.toy_seed, weights=cfg.weights,
                       device=cfg.device)


def expand_inputs(pattern):
    path = Path(pattern)
    if path.is_dir():
        files = sorted(p for p in path.iterdir()
                       if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"))
    elif path.exists():
        files = [path]
    else:
        files = sorted(Path(p) for p in glob.glob(pattern))
    if not files:
        raise ImageIOError(pattern, "no input images found")
    return files


def _targets(inputs, output, suffix, batch):
    if not batch:
        return [(inputs[0], Path(output))]
    out_dir = Path(output)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [(p, out_dir / (p.stem + suffix)) for p in inputs]


def _sidecar(path, tag, ext):
    return path.with_name(f"{path.stem}.{tag}{ext}")


def protect_one(src, dst, cfg, backend=None):
    backend = backend or make_backend(cfg)
    img = load_image(src)
    protected, report = protect(img, backend, cfg.attack)
    save_image(protected, dst)
    report.to_json(_sidecar(dst, "report", ".json"))
    report.write_trace(_sidecar(dst, "trace", ".csv"))
    return report


def detect_one(src, prefix, cfg, backend=None):
    backend = backend or make_backend(cfg)
    img = load_image(src)
    det = detect_tamper(img, backend, cfg.detect)
    prefix = Path(prefix)
    save_mask(det.mask, prefix.with_name(prefix.name + ".mask.png"))
    save_map(det.deviation, prefix.with_name(prefix.name + ".deviation"))
    save_overlay(img, det.mask, prefix.with_name(prefix.name + ".overlay.png"))
    return det


def _summary(det):
    if det.threshold is None:
        return f"tampered_fraction={det.tampered_fraction:.6f} threshold=blank"
    line = f"tampered_fraction={det.tampered_fraction:.6f} threshold={det.threshold:.6g}"
    return line + " blank" if det.blank else line


def _run_batch(fn, pairs, cfg, backend, jobs):
    if jobs <= 1 or len(pairs) <= 1:
        return [fn(src, dst, cfg, backend) for src, dst in pairs]
    # each worker builds its own backend handle
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, src, dst, cfg) for src, dst in pairs]
        return [f.result() for f in futures]


def cmd_protect(args, cfg, backend):
    inputs = expand_inputs(args.input)
    batch = len(inputs) > 1 or Path(args.input).is_dir()
    pairs = _targets(inputs, args.output, ".png", batch)
    reports = _run_batch(protect_one, pairs, cfg, backend, args.jobs or cfg.jobs)
    status = EXIT_OK
    for (src, dst), rep in zip(pairs, reports):
        print(f"{src} -> {dst} psnr_db={rep.psnr_db:.2f} "
              f"blank_fraction={rep.post_quantization_blank_fraction:.4f} converged={rep.converged}")
        if not rep.converged:
            status = EXIT_NONCONVERGED
    return status


def cmd_detect(args, cfg, backend):
    inputs = expand_inputs(args.input)
    batch = len(inputs) > 1 or Path(args.input).is_dir()
    pairs = _targets(inputs, args.output_prefix, "", batch)
    results = _run_batch(detect_one, pairs, cfg, backend, args.jobs or cfg.jobs)
    for (src, _), det in zip(pairs, results):
        print(f"{src}: {_summary(det)}" if batch else _summary(det))
    return EXIT_OK


def cmd_bench(args, cfg, backend):
    fixtures_dir = Path(args.fixtures_dir)
    seed = cfg.attack.seed
    if args.generate_fixtures:
        fixtures_dir.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(make_fixtures(cfg.fixtures, cfg.fixture_size, seed)):
            save_image(img, fixtures_dir / f"fixture_{i:02d}.png")
    if not fixtures_dir.is_dir():
        raise ImageIOError(fixtures_dir, "fixtures directory missing (use --generate-fixtures)")
    fixtures = [load_image(p) for p in sorted(fixtures_dir.glob("*.png"))]
    try:
        report = run_ablation(fixtures, backend, ablation_configs(cfg.attack), cfg.detect,
                              seed=seed, repeats=args.repeats)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report.to_json(args.report)
    if args.csv:
        report.to_csv(args.csv)
    for key, row in report.aggregates.items():
        f1 = "n/a" if row["f1"] is None else f"{row['f1']:.3f}"
        iou = "n/a" if row["iou"] is None else f"{row['iou']:.3f}"
        print(f"{key:<14} f1={f1} iou={iou} ({row['label']})")
    if all(c.error is not None for c in report.cases):
        log.error("every bench case failed")
        return EXIT_BACKEND
    return EXIT_OK


def cmd_inspect(args, cfg, backend):
    img = load_image(args.input)
    prompt = cfg.detect.prompt
    phi = forward(backend, img, prompt)
    C = cfg.detect.C
    stats = {
        "path": str(args.input),
        "backend": backend.name,
        "height": phi.shape[0],
        "width": phi.shape[1],
        "min": float(phi.min()),
        "max": float(phi.max()),
        "mean": float(phi.mean()),
        "std": float(phi.std()),
        "mask_fraction": float(np.mean(phi > 0)),
        "C": C,
        "blank_fraction": blank_fraction(phi, C, blank_tolerance(C)),
    }
    print(json.dumps(stats, indent=2))
    if args.dump:
        save_map(phi, args.dump)
    return EXIT_OK


COMMANDS = {"protect": cmd_protect, "detect": cmd_detect, "bench": cmd_bench,
            "inspect": cmd_inspect}


def main(argv=None):
    parser = _build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        rest, overrides = split_overrides(argv)
        args = parser.parse_args(rest)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        if getattr(args, "seed", None) is not None:
            overrides["seed"] = args.seed
        if getattr(args, "jobs", None) is not None:
            overrides["jobs"] = args.jobs
        cfg, backend = resolve(args.config, overrides)
        return COMMANDS[args.command](args, cfg, backend)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"blankcanvas: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"blankcanvas: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ImageIOError as exc:
        print(f"blankcanvas: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BackendUnavailable as exc:
        print(f"blankcanvas: backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except DivergenceError as exc:
        print(f"blankcanvas: optimisation diverged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except ValueError as exc:
        print(f"blankcanvas: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"blankcanvas: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""Command line interface.

Examples::

    pat-recon run --preset fig2e --out out/fig2e
    pat-recon compare --preset fig2 --out out/fig2
    pat-recon evaluate out/fig2e/recon.f64 out/fig2e/phantom.f64
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import io
from .config import ConfigError, PRESETS, load_config, preset_configs
from .errors import ConvergenceError, InvalidArgumentError, NumericalError
from .experiment import compare_experiments, run_experiment
from .forward import Sinogram
from .grid import Image, ImagingGrid
from .metrics import lateral_profile, psnr

EXIT_CONFIG = 2
EXIT_SOLVER = 3

_STAGES = {
    "phantom": ("phantom",),
    "forward": ("phantom", "forward"),
    "reconstruct": ("phantom", "forward", "reconstruct"),
    "run": ("phantom", "forward", "reconstruct", "evaluate"),
}


def _common(p):
    p.add_argument("--config", action="append", default=[], metavar="PATH",
                   help="experiment config (JSON); may be repeated")
    p.add_argument("--preset", action="append", default=[], metavar="NAME",
                   help=f"builtin preset: {', '.join(sorted(PRESETS))}")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, metavar="U64", help="seed (overrides the config)")
    p.add_argument("--threads", type=int, default=1, metavar="N",
                   help="worker threads for assembly and BLAS")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pat-recon",
                                     description="Photoacoustic CS reconstruction experiments")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [("phantom", "write the phantom"),
                            ("forward", "write phantom and simulated sinogram"),
                            ("reconstruct", "simulate (or read) data and reconstruct"),
                            ("run", "full pipeline including evaluation")]:
        p = sub.add_parser(name, help=help_text)
        _common(p)
        if name == "reconstruct":
            p.add_argument("--sinogram", metavar="PATH",
                           help="measured data (.f64 with sidecar, or .csv) instead of simulation")
    p = sub.add_parser("compare", help="run several experiments and tabulate PSNR")
    _common(p)
    p = sub.add_parser("evaluate", help="PSNR and center-row profiles of two images")
    p.add_argument("recon", help="reconstruction (.pgm or .f64 with sidecar)")
    p.add_argument("reference", help="reference image (.pgm or .f64 with sidecar)")
    p.add_argument("--out", metavar="DIR", help="write psnr.json and profile CSVs here")
    return parser


def _configs(args):
    sources = [("config", c) for c in args.config] + [("preset", p) for p in args.preset]
    if not sources:
        raise ConfigError("give --config or --preset")
    configs = []
    for kind, value in sources:
        if kind == "config":
            configs.append(load_config(value, output_dir=None, seed=args.seed))
        else:
            configs.extend(preset_configs(value, seed=args.seed))
    if args.out is not None:
        out = Path(args.out)
        configs = [_with_output(c, out / c.name if len(configs) > 1 else out) for c in configs]
    return configs


def _with_output(config, out):
    raw = dict(config.raw)
    raw["output_dir"] = str(out)
    return replace(config, output_dir=Path(out), raw=raw)


def _read_image(path) -> Image:
    path = Path(path)
    if path.suffix == ".pgm":
        return io.read_pgm(path)
    vec, meta = io.read_raw(path)
    return Image(ImagingGrid.from_dict(meta["grid"]), vec)


def _read_sinogram(path) -> Sinogram:
    path = Path(path)
    return io.read_sinogram_csv(path) if path.suffix == ".csv" else io.read_sinogram_raw(path)


def _evaluate(args) -> int:
    recon, ref = _read_image(args.recon), _read_image(args.reference)
    report = psnr(recon, ref)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_psnr_json(out / "psnr.json", report)
        io.write_profile_csv(out / "profile_recon.csv", lateral_profile(recon))
        io.write_profile_csv(out / "profile_reference.csv", lateral_profile(ref))
    print(json.dumps(report.to_dict()))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "evaluate":
            return _evaluate(args)
        with threadpool_limits(limits=max(1, args.threads)):
            configs = _configs(args)
            if args.command == "compare":
                out = Path(args.out) if args.out else Path("out") / "compare"
                rows = compare_experiments(configs, out, workers=args.threads)
                for row in rows:
                    print(f"{row['name']:<10} {row['method']:<4} NOA={row['noa']:<3} "
                          f"samples={row['samples']:<4} PSNR={row['psnr_db']:.2f} dB "
                          f"({row['runtime_s']:.1f} s)")
                return 0
            sinogram = None
            if getattr(args, "sinogram", None):
                sinogram = _read_sinogram(args.sinogram)
            for cfg in configs:
                manifest = run_experiment(cfg, workers=args.threads,
                                          stages=_STAGES[args.command], sinogram=sinogram)
                line = f"{cfg.name}: wrote {len(manifest['artifacts'])} files to {cfg.output_dir}"
                if "psnr_db" in manifest:
                    line += f", PSNR {manifest['psnr_db']:.2f} dB"
                print(line)
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, NumericalError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InvalidArgumentError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

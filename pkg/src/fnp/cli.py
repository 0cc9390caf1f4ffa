"""Command-line interface.

Subcommands: generate-data, train, evaluate, assimilate, reconstruct, ablate,
varsolve, report.  Exit codes: 0 success, 2 configuration / input error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .config import ConfigError, ExperimentConfig, parse_config_file
from .grids import GridError
from .synthetic import SpecError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _load_config(path) -> ExperimentConfig:
    return parse_config_file(path)


def cmd_generate_data(args) -> int:
    from .data import dataset_dir, ensure_dataset

    cfg = _load_config(args.config)
    manifest = ensure_dataset(cfg)
    print(f"dataset ready: {dataset_dir(cfg)} ({len(manifest.samples)} samples)")
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import save_checkpoint, train

    cfg = _load_config(args.config)
    bundle = train(cfg)
    ckpt = Path(args.out) if args.out else cfg.resolved_checkpoint_path()
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(bundle, ckpt)
    final = bundle.curve["train_nll"][-1] if bundle.curve["train_nll"] else float("nan")
    print(f"trained {cfg.variant} ({cfg.epochs} epochs); final train NLL {final:.4f}")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .experiments import evaluate
    from .reporting import save_result
    from .training import load_checkpoint

    cfg = _load_config(args.config)
    bundle = load_checkpoint(args.ckpt)
    result = evaluate(bundle, cfg)
    out = save_result(result, cfg.resolved_report_dir())
    a, b = result.analysis, result.background
    print(f"analysis   mse={a.mse:.5f} mae={a.mae:.5f}")
    print(f"background mse={b.mse:.5f} mae={b.mae:.5f}")
    print(f"report: {out}")
    return EXIT_OK


def _write_distribution(dist, grid, channels, out_path) -> None:
    from .grids import ChannelInfo, Field

    c = len(channels)
    mean = dist.mean.reshape(c, grid.n_lat, grid.n_lon)
    var = dist.variance.reshape(c, grid.n_lat, grid.n_lon)
    names = [ChannelInfo(ch.name, ch.group) for ch in channels]
    names += [ChannelInfo(f"{ch.name}_variance", ch.group) for ch in channels]
    stacked = np.concatenate([mean, var], axis=0).astype(np.float32)
    fileio.write_field(Field(grid, stacked, tuple(names)), out_path)


def cmd_assimilate(args) -> int:
    from .data import channel_infos
    from .experiments import assimilate_case
    from .training import load_checkpoint

    bundle = load_checkpoint(args.ckpt)
    background = fileio.read_field(args.background)
    obs = fileio.read_obs(args.obs)
    dist, grid = assimilate_case(bundle, background, obs)
    _write_distribution(dist, grid, channel_infos(bundle.config), args.out)
    print(f"analysis written: {args.out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    from .data import channel_infos
    from .experiments import assimilate_case
    from .training import load_checkpoint

    bundle = load_checkpoint(args.ckpt)
    obs = fileio.read_obs(args.obs)
    dist, grid = assimilate_case(bundle, None, obs)
    _write_distribution(dist, grid, channel_infos(bundle.config), args.out)
    print(f"reconstruction written: {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .experiments import ablate
    from .reporting import save_result

    cfg = _load_config(args.config)
    results = ablate(cfg)
    out_dir = cfg.resolved_report_dir()
    for res in results:
        save_result(res, out_dir)
        meta = res.analysis.metadata
        print(f"{meta['experiment_id']:42s} mse={res.analysis.mse:.5f} "
              f"(background {res.background.mse:.5f})")
    return EXIT_OK


def cmd_varsolve(args) -> int:
    from .varbaseline import VarProblem, analytic_analysis, cost

    try:
        data = np.load(args.problem)
    except OSError as exc:
        raise ConfigError(f"cannot read problem file {args.problem}: {exc}") from exc
    missing = {"x_b", "y", "B", "R", "H"} - set(data.files)
    if missing:
        raise ConfigError(f"problem file missing arrays: {sorted(missing)}")
    problem = VarProblem(data["x_b"], data["y"], data["B"], data["R"], data["H"])
    x_a = analytic_analysis(problem)
    np.savez(args.out, x_a=x_a, cost=cost(x_a, problem))
    print(f"analysis state written: {args.out} (J(x_a) = {cost(x_a, problem):.6g})")
    return EXIT_OK


def cmd_report(args) -> int:
    from .reporting import report

    artifacts = report(args.indir, args.out, channel=args.channel)
    n_plots = len(artifacts["plots"])
    print(f"wrote {artifacts['csv'][0]}, {artifacts['summary'][0]}, {n_plots} plot(s)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fnp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="materialize the synthetic dataset")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_generate_data)

    p = sub.add_parser("train", help="train a model variant")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="", help="checkpoint path override")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("assimilate", help="fuse one background file with one observation file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--background", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_assimilate)

    p = sub.add_parser("reconstruct", help="decode observations alone (no background)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("ablate", help="train/evaluate ablation variants and settings sweeps")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("varsolve", help="closed-form variational analysis of a problem file")
    p.add_argument("--problem", required=True, help=".npz with arrays x_b, y, B, R, H")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_varsolve)

    p = sub.add_parser("report", help="aggregate saved evaluations into CSV/summary/plots")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--channel", type=int, default=0)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, GridError, SpecError, fileio.FileFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception:
        from .training import NumericError
        from .varbaseline import VarProblemError

        exc_type, exc, _ = sys.exc_info()
        if isinstance(exc, (NumericError, VarProblemError, FloatingPointError)):
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        raise


if __name__ == "__main__":
    sys.exit(main())

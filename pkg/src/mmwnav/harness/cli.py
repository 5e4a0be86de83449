"""Command-line entry points for the simulation pipeline.

Exit codes: 0 success, 1 usage error, 2 data error (missing/invalid files or
unsatisfiable constraints).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .. import estimator as E
from .. import navsim as N
from .. import raytrace as R
from .. import sounding as S
from ..geometry import (Environment, GenConfig, GenerationFailed, PlacementFailed,
                        build_rx_grid, generate_environment, place_transmitters)
from .config import ExperimentConfig
from .pipeline import (atomic_write, build_dataset, load_dataset, load_model,
                       make_arrays, make_sounder, make_tracer, link_noise_seed,
                       run_pipeline, stage_build_dataset, stage_estimate,
                       stage_eval_classifier, stage_gen_envs, stage_navigate,
                       stage_raytrace, stage_train, snr_fn_for)
from .report import stage_report


class DataError(Exception):
    pass


def _load_cfg(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        try:
            with open(args.config) as f:
                return ExperimentConfig.from_json(f.read())
        except (OSError, ValueError, TypeError, KeyError) as exc:
            raise DataError(f"bad config {args.config}: {exc}")
    return ExperimentConfig()


def _cmd_gen_env(args):
    cfg = _load_cfg(args)
    if args.n is not None:
        if args.n < 1:
            raise DataError("need at least one environment")
        eval_n = max(1, args.n // 2) if args.n > 1 else 0
        cfg = ExperimentConfig.from_json(cfg.to_json())
        cfg.n_envs, cfg.eval_envs = args.n, eval_n
        cfg.train_envs = args.n - eval_n
    if args.seed is not None:
        cfg.seeds.env = args.seed
    try:
        paths = stage_gen_envs(cfg, args.out)
    except (GenerationFailed, PlacementFailed) as exc:
        raise DataError(str(exc))
    print(f"wrote {len(paths)} environments under {args.out}/envs")


def _cmd_raytrace(args):
    cfg = _load_cfg(args)
    stats = stage_raytrace(cfg, args.out)
    print(f"traced {len(stats)} (env, tx) maps, "
          f"{sum(s[2] for s in stats)} links")


def _cmd_sound(args):
    cfg = _load_cfg(args)
    arrays = make_arrays(cfg)
    sounder = make_sounder(cfg, arrays)
    try:
        with open(args.env) as f:
            env = Environment.from_json(f.read())
    except OSError as exc:
        raise DataError(str(exc))
    ix, iy = (int(v) for v in args.cell.split(","))
    grid = build_rx_grid(env, cfg.grid_nx, cfg.grid_ny, cfg.grid_spacing_m)
    tracer = make_tracer(env, cfg)
    center = grid.cell_center(ix, iy)
    paths = tracer.trace_points(env.tx[args.tx_id], center[None, :])[0]
    paths = sorted(paths, key=lambda p: -abs(p.gain))[:R.LinkRecord.L_MAX]
    seed = link_noise_seed(cfg, args.env_id, args.tx_id, (ix, iy))
    tensor = sounder.sound_link(paths, noise_seed=seed, noiseless=args.noiseless)
    S.write_tensor(args.out, tensor)
    print(f"wrote tensor {tensor.shape} to {args.out}")


def _cmd_estimate(args):
    cfg = _load_cfg(args)
    arrays = make_arrays(cfg)
    if args.tensor:
        try:
            tensor = S.read_tensor(args.tensor)
        except (OSError, ValueError) as exc:
            raise DataError(str(exc))
        ests = E.estimate_link(tensor, arrays, k_paths=cfg.k_paths)
        atomic_write(args.out, E.estimates_to_json(0, (0, 0), ests) + "\n")
        print(f"wrote {len(ests)} estimates to {args.out}")
    else:
        stats = stage_estimate(cfg, args.out)
        print(f"estimated {len(stats)} (env, tx) maps")


def _cmd_build_dataset(args):
    from .pipeline import KeyMismatch
    cfg = _load_cfg(args)
    try:
        samples = stage_build_dataset(cfg, args.out)
    except (OSError, KeyMismatch) as exc:
        raise DataError(str(exc))
    print(f"dataset: {len(samples)} samples")


def _cmd_train(args):
    cfg = _load_cfg(args)
    results = stage_train(cfg, args.out)
    for mode, tr in results.items():
        print(f"{mode}: final train acc "
              f"{tr.history['train_acc'][-1]:.3f} val acc {tr.history['val_acc'][-1]:.3f}")


def _cmd_eval_classifier(args):
    cfg = _load_cfg(args)
    try:
        report = stage_eval_classifier(cfg, args.out)
    except OSError as exc:
        raise DataError(str(exc))
    for mode, r in sorted(report.items()):
        print(f"{mode}: accuracy {r['accuracy']:.3f}")


def _cmd_navigate(args):
    cfg = _load_cfg(args)
    lines = stage_navigate(cfg, args.out)
    print(f"ran {len(lines)} episodes")


def _cmd_report(args):
    cfg = _load_cfg(args)
    try:
        stage_report(cfg, args.inp)
    except OSError as exc:
        raise DataError(str(exc))
    if os.path.abspath(args.out) != os.path.abspath(os.path.join(args.inp, "reports")):
        os.makedirs(args.out, exist_ok=True)
        src = os.path.join(args.inp, "reports")
        for name in sorted(os.listdir(src)):
            with open(os.path.join(src, name)) as f:
                atomic_write(os.path.join(args.out, name), f.read())
    print(f"reports under {args.out}")


def _cmd_run_all(args):
    cfg = _load_cfg(args)
    run_pipeline(cfg, args.out, navigate=not args.no_nav)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mmwnav",
        description="mmWave-assisted target navigation simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", help="ExperimentConfig JSON file")
        p.add_argument("--seed", type=int, help="override the environment seed")
        p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("gen-env", help="generate floor plans with TX placements")
    common(p)
    p.add_argument("--n", type=int, help="number of environments")
    p.set_defaults(fn=_cmd_gen_env)

    p = sub.add_parser("raytrace", help="trace path maps for all (env, tx)")
    common(p)
    p.set_defaults(fn=_cmd_raytrace)

    p = sub.add_parser("sound", help="write one link's correlation tensor")
    common(p)
    p.add_argument("--env", required=True, help="environment JSON file")
    p.add_argument("--env-id", type=int, default=0)
    p.add_argument("--tx-id", type=int, default=0)
    p.add_argument("--cell", required=True, help="ix,iy grid cell")
    p.add_argument("--noiseless", action="store_true")
    p.set_defaults(fn=_cmd_sound)

    p = sub.add_parser("estimate", help="path estimates from tensors or path maps")
    common(p)
    p.add_argument("--tensor", help="single tensor container to estimate")
    p.set_defaults(fn=_cmd_estimate)

    p = sub.add_parser("build-dataset", help="join estimates with ground truth")
    common(p)
    p.set_defaults(fn=_cmd_build_dataset)

    p = sub.add_parser("train", help="train the link-state classifiers")
    common(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval-classifier", help="held-out confusion and accuracy")
    common(p)
    p.set_defaults(fn=_cmd_eval_classifier)

    p = sub.add_parser("navigate", help="run navigation policy episodes")
    common(p)
    p.set_defaults(fn=_cmd_navigate)

    p = sub.add_parser("report", help="export report CSVs")
    p.add_argument("--config", help="ExperimentConfig JSON file")
    p.add_argument("--in", dest="inp", required=True, help="run directory")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("run-all", help="full pipeline under one config")
    common(p)
    p.add_argument("--no-nav", action="store_true", help="skip navigation")
    p.set_defaults(fn=_cmd_run_all)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; the contract wants 1
        return 0 if exc.code in (0, None) else 1
    try:
        args.fn(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (E.DegenerateTensor, N.InvalidStart, R.MisalignedInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

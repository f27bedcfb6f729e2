"""Command-line entry point.

Subcommands:
  generate  render a synthetic attribute-factored dataset to disk
  corrupt   corrupt a dataset (denoise/inpaint protocol) and save measurements
  recover   run one recovery method on a corrupted dataset
  report    full experiment: corrupt + run methods + PSNR report table

Experiment configuration comes from (in increasing precedence) a preset, a
flat "key = value" config file and --key value flags. Unknown keys are
rejected by name.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from . import autoencoder as ae
from . import dataset as dsmod
from . import measurement as meas
from . import recovery as rec
from . import tensor_ring as tr
from .metrics import REPORT_HEADER, ReportRow, masked_psnr, psnr


@dataclass
class ExperimentConfig:
    task: str = "denoise"
    methods: str = "tr-ae,csae,lstr"
    dataset: str = ""                # directory to load; empty = synthetic
    dims: str = "4,5,5"
    size: int = 64
    channels: int = 1
    variation: str = "position"
    snr_db: float = 20.0
    block: int = 16
    rank: int = 8
    iters: int = 300
    seeds: str = "0"
    lambda1: float = 1.0
    lambda2: float = 1.0
    adam_lr: float = 0.001
    sgd_lr: float = 0.1
    batch_size: int = 20
    parallel: bool = False
    out: str = "runs/experiment"

    def method_list(self) -> list:
        return [m.strip() for m in self.methods.split(",") if m.strip()]

    def seed_list(self) -> list:
        return [int(s) for s in self.seeds.split(",") if s.strip()]

    def dims_tuple(self) -> tuple:
        return tuple(int(v) for v in self.dims.split(","))


PRESETS = {
    "toy-denoise": {"task": "denoise", "dims": "4,5,5", "size": 64, "channels": 1,
                    "snr_db": 20.0, "rank": 8, "iters": 3000},
    "toy-inpaint": {"task": "inpaint", "dims": "4,5,5", "size": 64, "channels": 1,
                    "block": 16, "rank": 8, "iters": 3000},
}

_FIELDS = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELDS[key]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config key {key!r}: expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_file(path) -> dict:
    """Flat "key = value" lines; '#' starts a comment; unknown keys rejected."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in _FIELDS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _parse_value(key, raw)
    return values


def build_config(preset: str | None = None, config_path: str | None = None,
                 overrides: dict | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        cfg = replace(cfg, **PRESETS[preset])
    if config_path is not None:
        cfg = replace(cfg, **parse_config_file(config_path))
    if overrides:
        for key in overrides:
            if key not in _FIELDS:
                raise ValueError(f"unknown config key {key!r}")
        cfg = replace(cfg, **overrides)
    return cfg


def check_compressive_rank(dims, code_dim: int, rank: int, what: str) -> None:
    """Refuse ranks for which the factorization stores no fewer values than
    the dense code tensor it replaces."""
    factored = rank * rank * (sum(dims) + code_dim)
    dense = code_dim * int(np.prod(dims))
    if factored >= dense:
        raise ValueError(
            f"rank {rank} is not compressive for {what}: factorization holds "
            f"{factored} parameters vs {dense} dense values; lower the rank")


# ---------------------------------------------------------------------------
# experiment runner
# ---------------------------------------------------------------------------

def _load_or_generate(cfg: ExperimentConfig) -> dsmod.StructuredDataset:
    if cfg.dataset:
        ds = dsmod.load_directory(cfg.dataset)
        if ds.images is None:
            raise ValueError(f"{cfg.dataset}: dataset has no ground-truth images")
        return ds
    spec = dsmod.SyntheticSpec(dims=cfg.dims_tuple(), size=cfg.size,
                               channels=cfg.channels, variation=cfg.variation)
    return dsmod.generate_synthetic(spec)


def _recovery_config(cfg: ExperimentConfig, method: str, seed: int) -> rec.RecoveryConfig:
    return rec.RecoveryConfig(method=method, rank=cfg.rank, iters=cfg.iters,
                              lambda1=cfg.lambda1, lambda2=cfg.lambda2,
                              adam_lr=cfg.adam_lr, sgd_lr=cfg.sgd_lr,
                              seed=seed, batch_size=cfg.batch_size)


def _hole_selector(op: meas.MeasurementOp) -> np.ndarray:
    return op.mask == 0.0


def _evaluate(result: rec.RecoveryResult, ds: dsmod.StructuredDataset,
              task: str) -> tuple:
    scores = [psnr(xh, x) for xh, x in zip(result.images, ds.images)]
    masked = None
    if task == dsmod.INPAINT:
        masked = float(np.mean([
            masked_psnr(xh, x, _hole_selector(op))
            for xh, x, op in zip(result.images, ds.images, ds.ops)]))
    return float(np.mean(scores)), float(np.std(scores)), masked


def _save_method_outputs(result: rec.RecoveryResult, ds: dsmod.StructuredDataset,
                         out_dir: str, seed: int) -> None:
    run_dir = os.path.join(out_dir, result.method, f"seed{seed}")
    os.makedirs(run_dir, exist_ok=True)
    for multi, img in zip(ds.multi_indices(), result.images):
        dsmod._write_pnm(os.path.join(run_dir, dsmod._image_name(multi, ds.channels)), img)
    rec.write_loss_trace(os.path.join(run_dir, "loss_trace.csv"), result.trace)
    if result.cores is not None:
        tr.save_cores(result.cores, os.path.join(run_dir, "cores.trc"))
    if result.params is not None:
        ae.save_params(result.params, os.path.join(run_dir, "autoencoder.aep"))


def run_experiment(cfg: ExperimentConfig) -> list:
    """Corrupt, recover with every requested method and seed, write report.csv.

    Returns the report rows. Everything except the wall-time column is
    deterministic for a fixed config.
    """
    methods = cfg.method_list()
    for m in methods:
        if m not in rec.METHODS:
            raise ValueError(f"unknown method {m!r}; available: {rec.METHODS}")
    ds = _load_or_generate(cfg)
    d_latent = ae.ENCODER_CHANNELS[-1] * (ds.height // 16) * (ds.width // 16)
    d_pixels = ds.channels * ds.height * ds.width
    if rec.TR_AE in methods:
        check_compressive_rank(ds.attribute_dims, d_latent, cfg.rank, "the latent codes")
    if rec.LSTR in methods:
        check_compressive_rank(ds.attribute_dims, d_pixels, cfg.rank, "pixel space")
    os.makedirs(cfg.out, exist_ok=True)

    max_workers = len(methods)
    if os.environ.get("RECOVERY_THREADS"):
        max_workers = max(1, min(max_workers, int(os.environ["RECOVERY_THREADS"])))

    rows = []
    for seed in cfg.seed_list():
        corrupted = dsmod.corrupt_dataset(ds, cfg.task, seed,
                                          snr_db=cfg.snr_db, block=cfg.block)
        meas.save_sidecar(os.path.join(cfg.out, f"replay_seed{seed}.txt"),
                          ds.attribute_dims, ds.multi_indices(), corrupted.ops)
        observed = corrupted.observations()
        print(f"seed {seed}: corrupted {ds.num_samples} images "
              f"({cfg.task}, input psnr {corrupted.input_psnr:.2f} dB)")

        def run_one(method: str) -> rec.RecoveryResult:
            return rec.train(observed, _recovery_config(cfg, method, seed))

        if cfg.parallel and len(methods) > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                results = list(pool.map(run_one, methods))
        else:
            results = [run_one(m) for m in methods]

        for result in results:
            mean, std, masked = _evaluate(result, corrupted, cfg.task)
            _save_method_outputs(result, corrupted, cfg.out, seed)
            rows.append(ReportRow(result.method, cfg.task, mean, std, masked,
                                  result.iterations, result.seconds))
            print(f"seed {seed}: {result.method}: {mean:.2f} dB "
                  f"({result.iterations} steps, {result.seconds:.1f} s)")

    report_path = os.path.join(cfg.out, "report.csv")
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER.split(","))
        for row in rows:
            writer.writerow(row.csv_fields())
    print(f"wrote {report_path}")
    return rows


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_generate(args) -> int:
    spec = dsmod.SyntheticSpec(dims=tuple(int(v) for v in args.dims.split(",")),
                               size=args.size, channels=args.channels,
                               variation=args.variation)
    ds = dsmod.generate_synthetic(spec)
    dsmod.save_directory(ds, args.out)
    print(f"wrote {ds.num_samples} images to {args.out}")
    return 0


def _cmd_corrupt(args) -> int:
    ds = dsmod.load_directory(args.dataset)
    corrupted = dsmod.corrupt_dataset(ds, args.task, args.seed,
                                      snr_db=args.snr_db, block=args.block)
    out = args.out or args.dataset
    dsmod.save_directory(corrupted, out)
    print(f"corrupted {ds.num_samples} images ({args.task}), "
          f"input psnr {corrupted.input_psnr:.2f} dB -> {out}")
    return 0


def _cmd_recover(args) -> int:
    ds = dsmod.load_directory(args.dataset)
    if ds.measurements is None:
        raise ValueError(f"{args.dataset}: no measurements found; run corrupt first")
    observed = ds.observations()
    d_latent = ae.ENCODER_CHANNELS[-1] * (ds.height // 16) * (ds.width // 16)
    if args.method == rec.TR_AE:
        check_compressive_rank(ds.attribute_dims, d_latent, args.rank, "the latent codes")
    if args.method == rec.LSTR:
        check_compressive_rank(ds.attribute_dims,
                               ds.channels * ds.height * ds.width,
                               args.rank, "pixel space")
    cfg = rec.RecoveryConfig(method=args.method, rank=args.rank, iters=args.iters,
                             lambda1=args.lambda1, lambda2=args.lambda2,
                             adam_lr=args.adam_lr, sgd_lr=args.sgd_lr,
                             seed=args.seed, batch_size=args.batch_size)
    result = rec.train(observed, cfg)
    os.makedirs(args.out, exist_ok=True)
    for multi, img in zip(ds.multi_indices(), result.images):
        dsmod._write_pnm(os.path.join(args.out, dsmod._image_name(multi, ds.channels)), img)
    rec.write_loss_trace(os.path.join(args.out, "loss_trace.csv"), result.trace)
    if result.cores is not None:
        tr.save_cores(result.cores, os.path.join(args.out, "cores.trc"))
    if result.params is not None:
        ae.save_params(result.params, os.path.join(args.out, "autoencoder.aep"))
    print(f"{args.method}: {result.iterations} steps in {result.seconds:.1f} s "
          f"-> {args.out}")
    return 0


def _cmd_report(args) -> int:
    overrides = {}
    for key in _FIELDS:
        value = getattr(args, f"opt_{key}")
        if value is not None:
            overrides[key] = _parse_value(key, value)
    cfg = build_config(args.preset, args.config, overrides)
    run_experiment(cfg)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ringae",
        description="Recover structured image sets from corrupted measurements "
                    "with a tensor-ring factorized autoencoder.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic dataset to disk")
    p.add_argument("--dims", default="4,5,5")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--variation", default="position", choices=["position", "scale"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("corrupt", help="corrupt a dataset and save measurements")
    p.add_argument("--dataset", required=True)
    p.add_argument("--task", default="denoise", choices=[dsmod.DENOISE, dsmod.INPAINT])
    p.add_argument("--snr-db", type=float, default=20.0, dest="snr_db")
    p.add_argument("--block", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="defaults to the dataset directory")
    p.set_defaults(func=_cmd_corrupt)

    p = sub.add_parser("recover", help="run one recovery method")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", default=rec.TR_AE, choices=list(rec.METHODS))
    p.add_argument("--rank", type=int, default=8)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=1.0)
    p.add_argument("--adam-lr", type=float, default=0.001, dest="adam_lr")
    p.add_argument("--sgd-lr", type=float, default=0.1, dest="sgd_lr")
    p.add_argument("--batch-size", type=int, default=20, dest="batch_size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_recover)

    p = sub.add_parser("report", help="full experiment with report.csv")
    p.add_argument("--preset", default=None, choices=sorted(PRESETS))
    p.add_argument("--config", default=None, help="flat key = value file")
    for key in _FIELDS:
        p.add_argument(f"--{key.replace('_', '-')}", dest=f"opt_{key}", default=None,
                       metavar="V", help=f"override config key {key}")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, rec.RecoveryDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""
SSDU reconstruction toolkit
Command-line entry point
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from loguru import logger
from pydantic import ValidationError

from execution.checkpoint import load_checkpoint, save_checkpoint
from execution.config import (
    FLAG_PATHS,
    PartitionPolicy,
    PhantomSpec,
    dump_train_config,
    get_data_dir,
    load_train_config,
    settings,
)
from execution.dataset import (
    load_images,
    load_mask,
    load_records,
    split_records,
    write_image,
    write_mask,
    write_record,
)
from execution.errors import ConfigError, ConsistencyError, SSDUError, UsageError
from execution.experiments import (
    DEFAULT_ACCELERATIONS,
    DEFAULT_MODES,
    DEFAULT_OVERLAPS,
    DEFAULT_RHOS,
    DEFAULT_SCHEMES,
    METHODS,
    ExperimentData,
    reconstruct_slice,
    run_acceleration_sweep,
    run_cross_validation,
    run_method_comparison,
    run_overlap_study,
    run_rho_sweep,
    run_scheme_comparison,
)
from execution.logging_setup import configure_logging
from execution.metrics import MetricsRow, compare_images, write_metrics_csv
from execution.partition import partition_mask
from execution.phantom import make_dataset
from execution.preview import write_preview, write_strip
from execution.sampling import equispaced_mask, sheared_mask
from execution.training import train, write_history_csv


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting"""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _int_pair(text: str) -> tuple:
    parts = [p for p in text.lower().replace("x", ",").split(",") if p.strip()]
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected N or NxM, got {text!r}")
    return tuple(int(p) for p in parts)


def _float_list(text: str) -> List[float]:
    return [float(p) for p in text.split(",") if p.strip()]


def _int_list(text: str) -> List[int]:
    return [int(p) for p in text.split(",") if p.strip()]


def _str_list(text: str) -> List[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _add_train_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key=value training configuration file")
    for key in FLAG_PATHS:
        parser.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, help=f"overrides {FLAG_PATHS[key]}")


def _train_config(args: argparse.Namespace):
    overrides = {key: getattr(args, key) for key in FLAG_PATHS if getattr(args, key, None) is not None}
    return load_train_config(args.config, overrides)


# ============================================
# SUBCOMMANDS
# ============================================

def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        spec = PhantomSpec(
            height=args.height,
            width=args.width,
            n_coils=args.n_coils,
            noise_std=args.noise_std,
            jitter=args.jitter,
            phase_amplitude=args.phase_amplitude,
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid phantom specification: {e}") from e

    for record in make_dataset(spec, args.n_slices, args.seed):
        write_record(args.out, record)
    logger.info(f"Dataset written to {args.out}")
    return 0


def cmd_genmask(args: argparse.Namespace) -> int:
    if args.pattern == "equispaced":
        omega = equispaced_mask(args.height, args.width, args.R, args.acs_lines, args.offset)
    else:
        omega = sheared_mask(args.height, args.width, args.R, args.acs_block, args.shear)
    omega = omega.with_kind("omega", seed=args.seed)
    write_mask(args.out, omega)
    logger.info(f"{args.pattern} mask R={args.R}: {omega.count} of {omega.grid.size} samples -> {args.out}")
    return 0


def cmd_partition(args: argparse.Namespace) -> int:
    fields = {
        "rho": args.rho,
        "scheme": args.scheme,
        "gaussian_std_fraction": args.gaussian_std_fraction,
        "center_keep": args.center_keep,
        "overlap_fraction": args.overlap_fraction,
        "identical": args.identical,
    }
    try:
        policy = PartitionPolicy(**{k: v for k, v in fields.items() if v is not None})
    except ValidationError as e:
        raise ConfigError(f"Invalid partition policy: {e}") from e

    omega = load_mask(args.omega)
    theta, lam = partition_mask(omega, policy, args.seed)
    write_mask(args.out_dir / "theta.ksp", theta)
    write_mask(args.out_dir / "lambda.ksp", lam)
    logger.info(f"|Theta| = {theta.count}, |Lambda| = {lam.count} -> {args.out_dir}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _train_config(args)
    records = load_records(args.data)
    omega = load_mask(args.omega)
    data = ExperimentData.build(records, omega, args.n_test, cfg.n_val)

    result = train(data.train, cfg, data.val)
    save_checkpoint(args.out, result.params, cfg.unroll)
    Path(f"{args.out}.cfg").write_text(dump_train_config(cfg), encoding="utf-8")
    if args.history is not None:
        write_history_csv(result.history, args.history)
    return 0


def cmd_reconstruct(args: argparse.Namespace) -> int:
    params, unroll = (None, None)
    if args.method == "network":
        if args.checkpoint is None:
            raise UsageError("--checkpoint is required for --method network")
        params, unroll = load_checkpoint(args.checkpoint)

    records = load_records(args.data)
    if args.n_test:
        records = split_records(records, args.n_test)[2]
    omega = load_mask(args.omega)

    for record in records:
        s = record.undersample(omega)
        image = reconstruct_slice(args.method, s, params, unroll, cg_iterations=args.cg_iterations)
        write_image(args.out_dir / f"{s.slice_id}.recon.ksp", image,
                    {"slice_id": s.slice_id, "method": args.method, "units": "physical"})
        write_preview(image, args.out_dir / f"{s.slice_id}.recon.pgm")
    logger.info(f"Reconstructed {len(records)} slices with {args.method} -> {args.out_dir}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    refs = load_images(args.ref, args.ref_suffix)
    ests = load_images(args.est, args.est_suffix)
    shared = sorted(set(refs) & set(ests))
    if not shared:
        raise ConsistencyError(f"no slice ids shared between {args.ref} and {args.est}")
    for sid in sorted(set(refs) - set(ests)):
        logger.warning(f"slice {sid}: no estimate in {args.est}")

    rows = []
    for sid in shared:
        value_nmse, value_ssim = compare_images(refs[sid], ests[sid])
        rows.append(MetricsRow(slice_id=sid, method=args.method, nmse=value_nmse, ssim=value_ssim))
        if args.strips is not None:
            write_strip([refs[sid], ests[sid], ests[sid] - refs[sid]], args.strips / f"{sid}.compare.pgm")
    write_metrics_csv(rows, args.out)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _train_config(args)
    records = load_records(args.data)

    if args.kind == "acceleration":
        rows = run_acceleration_sweep(
            records, cfg, args.n_test,
            accelerations=args.accelerations, pattern=args.pattern,
            acs_block=args.acs_block, acs_lines=args.acs_lines,
            workers=args.workers, history_dir=args.history_dir,
        )
        write_metrics_csv(rows, args.out, include_timing=not args.no_timing)
        return 0

    if args.omega is None:
        raise UsageError(f"sweep {args.kind} needs --omega")
    omega = load_mask(args.omega)
    data = ExperimentData.build(records, omega, args.n_test, cfg.n_val)
    common = {"workers": args.workers, "history_dir": args.history_dir}

    if args.kind == "rho":
        rows = run_rho_sweep(data, cfg, rho_list=args.rho_list, **common)
    elif args.kind == "overlap":
        rows = run_overlap_study(data, cfg, overlaps=args.overlaps, **common)
    elif args.kind == "scheme":
        rows = run_scheme_comparison(data, cfg, schemes=args.schemes, **common)
    elif args.kind == "methods":
        rows = run_method_comparison(data, cfg, modes=args.modes, **common)
    else:
        rows = run_cross_validation(data.train, cfg, folds=args.folds, rho_list=args.rho_list,
                                    schemes=args.schemes, workers=args.workers)
    write_metrics_csv(rows, args.out, include_timing=not args.no_timing)
    return 0


# ============================================
# PARSER
# ============================================

def build_parser() -> CliParser:
    parser = CliParser(prog="ssdu", description="Self-supervised physics-guided MRI reconstruction")
    parser.add_argument("--log-level", default=None, help=f"stderr log level (default {settings.log_level})")
    parser.add_argument("--log-file", default=None, help="rotating log file ('' disables)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a phantom dataset")
    p.add_argument("--out", type=Path, default=get_data_dir())
    p.add_argument("--n-slices", type=int, default=36)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--n-coils", type=int, default=8)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=0.04)
    p.add_argument("--phase-amplitude", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=settings.default_seed)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("genmask", help="generate an acquisition mask")
    p.add_argument("--pattern", choices=("equispaced", "sheared"), default="equispaced")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--R", type=int, required=True)
    p.add_argument("--acs-lines", type=int, default=24)
    p.add_argument("--acs-block", type=_int_pair, default=(32, 32))
    p.add_argument("--shear", type=int, default=1)
    p.add_argument("--offset", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=settings.default_seed)
    p.set_defaults(handler=cmd_genmask)

    p = sub.add_parser("partition", help="split an acquisition mask into Theta and Lambda")
    p.add_argument("--omega", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--rho", type=float)
    p.add_argument("--scheme", choices=("uniform", "gaussian"))
    p.add_argument("--gaussian-std-fraction", type=float)
    p.add_argument("--center-keep", type=_int_pair)
    p.add_argument("--overlap-fraction", type=float)
    p.add_argument("--identical", action="store_true", default=None)
    p.add_argument("--seed", type=int, default=settings.default_seed)
    p.set_defaults(handler=cmd_partition)

    p = sub.add_parser("train", help="train the unrolled network")
    p.add_argument("--data", type=Path, default=get_data_dir())
    p.add_argument("--omega", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--history", type=Path, help="loss history CSV")
    p.add_argument("--n-test", type=int, default=0, help="trailing slices excluded from training")
    _add_train_config_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruct slices")
    p.add_argument("--data", type=Path, default=get_data_dir())
    p.add_argument("--omega", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--method", choices=METHODS, default="network")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--n-test", type=int, default=0, help="only the trailing N slices (0 = all)")
    p.add_argument("--cg-iterations", type=int, default=50)
    p.set_defaults(handler=cmd_reconstruct)

    p = sub.add_parser("eval", help="NMSE/SSIM of estimates against references")
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--est", type=Path, required=True)
    p.add_argument("--ref-suffix", default="image")
    p.add_argument("--est-suffix", default="recon")
    p.add_argument("--method", default="network")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--strips", type=Path, help="directory for reference | estimate | error previews")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep", help="run an experiment sweep")
    p.add_argument("kind", choices=("rho", "overlap", "scheme", "acceleration", "crossval", "methods"))
    p.add_argument("--data", type=Path, default=get_data_dir())
    p.add_argument("--omega", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-test", type=int, default=6)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--history-dir", type=Path)
    p.add_argument("--no-timing", action="store_true", help="leave wall time empty for reproducible CSVs")
    p.add_argument("--rho-list", type=_float_list, default=list(DEFAULT_RHOS))
    p.add_argument("--overlaps", type=_str_list, default=list(DEFAULT_OVERLAPS))
    p.add_argument("--schemes", type=_str_list, default=list(DEFAULT_SCHEMES))
    p.add_argument("--modes", type=_str_list, default=list(DEFAULT_MODES))
    p.add_argument("--accelerations", type=_int_list, default=list(DEFAULT_ACCELERATIONS))
    p.add_argument("--pattern", choices=("sheared", "equispaced"), default="sheared")
    p.add_argument("--acs-block", type=_int_pair, default=(16, 16))
    p.add_argument("--acs-lines", type=int, default=8)
    p.add_argument("--folds", type=int, default=5)
    _add_train_config_flags(p)
    p.set_defaults(handler=cmd_sweep)

    return parser


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand

    Returns:
        0 on success, 1 on usage errors, 2 on data/consistency errors
    """
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        logger.error(str(e))
        return e.exit_code
    except SystemExit as e:
        return int(e.code or 0)

    configure_logging(args.log_level, args.log_file)
    try:
        return args.handler(args)
    except SSDUError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(cli())

"""
Experiment runners
Loss-mask ablations, acceleration and training-strategy comparisons, cross-validation
"""
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from loguru import logger

from execution.config import TrainConfig, UnrollConfig, get_workers, updated
from execution.dataset import SliceRecord, split_records
from execution.errors import SSDUError, TrainingError, UsageError
from execution.metrics import MetricsRow, compare_images
from execution.mri_operators import SamplingMask, reference_image, zero_filled_init
from execution.sampling import equispaced_mask, sheared_mask
from execution.solvers import cg_sense
from execution.training import (
    TrainingSlice,
    mean_loss,
    prepare_slice,
    slice_partitions,
    train,
    write_history_csv,
)
from execution.unrolled_network import ParamStore, reconstruct


DEFAULT_RHOS = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
DEFAULT_OVERLAPS = ("0", "0.5", "1.0", "identical")
DEFAULT_SCHEMES = ("uniform", "gaussian")
DEFAULT_ACCELERATIONS = (4, 6, 8)
DEFAULT_MODES = ("ssdu", "supervised_kspace", "supervised_image")
METHODS = ("network", "cg-sense", "zero-filled")

J = TypeVar("J")
R_ = TypeVar("R_")


# ============================================
# RECONSTRUCTION AND SCORING
# ============================================

def reconstruct_slice(
    method: str,
    s: TrainingSlice,
    params: Optional[ParamStore] = None,
    unroll: Optional[UnrollConfig] = None,
    cg_iterations: int = 50,
) -> np.ndarray:
    """
    Reconstruct one slice in physical units with the full acquired mask

    Args:
        method: network | cg-sense | zero-filled
        s: undersampled slice
        params, unroll: trained weights and their unroll configuration (network only)
        cg_iterations: CG-SENSE iteration cap
    """
    if method == "network":
        if params is None or unroll is None:
            raise UsageError("network reconstruction needs a checkpoint")
        return reconstruct(s.kspace, s.maps, params, unroll)

    y = s.kspace.normalized()
    if method == "cg-sense":
        return cg_sense(y, s.maps, y.acquired_mask, n_iter=cg_iterations).data * y.scale
    if method == "zero-filled":
        return zero_filled_init(y, s.maps, y.acquired_mask).data * y.scale
    raise UsageError(f"unknown reconstruction method {method!r}; expected one of {METHODS}")


def score_slice(s: TrainingSlice, image: np.ndarray, method: str, elapsed: Optional[float], **tags) -> MetricsRow:
    if s.full is None:
        raise UsageError(f"slice {s.slice_id}: scoring needs the fully-sampled reference")
    value_nmse, value_ssim = compare_images(reference_image(s.full, s.maps), image)
    return MetricsRow(slice_id=s.slice_id, method=method, nmse=value_nmse, ssim=value_ssim, wall_time_s=elapsed, **tags)


def baseline_rows(test: Sequence[TrainingSlice], methods: Sequence[str] = ("cg-sense", "zero-filled"), **tags) -> List[MetricsRow]:
    rows = []
    for s in test:
        for method in methods:
            t0 = time.perf_counter()
            image = reconstruct_slice(method, s)
            rows.append(score_slice(s, image, method, time.perf_counter() - t0, **tags))
    return rows


# ============================================
# RUN JOBS
# ============================================

@dataclass(frozen=True)
class ExperimentData:
    """Undersampled train/validation/test slices sharing one acquisition mask"""

    train: Tuple[TrainingSlice, ...]
    val: Tuple[TrainingSlice, ...]
    test: Tuple[TrainingSlice, ...]
    R: Optional[float] = None

    @classmethod
    def build(cls, records: Sequence[SliceRecord], omega: SamplingMask, n_test: int, n_val: int = 0) -> "ExperimentData":
        train_r, val_r, test_r = split_records(records, n_test, n_val)
        R = omega.descriptor.get("R")
        return cls(
            train=tuple(r.undersample(omega) for r in train_r),
            val=tuple(r.undersample(omega) for r in val_r),
            test=tuple(r.undersample(omega) for r in test_r),
            R=float(R) if R is not None else None,
        )


@dataclass(frozen=True)
class RunJob:
    """One independent training run and its evaluation"""

    label: str
    method: str
    cfg: TrainConfig
    data: ExperimentData
    tags: Dict[str, Any] = field(default_factory=dict)
    history_path: Optional[Path] = None


def _train_job(job: RunJob):
    logger.info(f"Run {job.label}: training {len(job.data.train)} slices")
    try:
        return train(job.data.train, job.cfg, job.data.val)
    except TrainingError as e:
        logger.error(f"Run {job.label} failed: {e}")
        raise
    except SSDUError as e:
        logger.error(f"Run {job.label} failed: {e}")
        raise TrainingError(f"run {job.label}: {e}", rho=job.cfg.partition.rho) from e


def run_job(job: RunJob) -> List[MetricsRow]:
    """Train, write the loss history, and score every test slice"""
    result = _train_job(job)
    if job.history_path is not None:
        write_history_csv(result.history, job.history_path)

    rows = []
    for s in job.data.test:
        t0 = time.perf_counter()
        image = reconstruct_slice("network", s, result.params, job.cfg.unroll)
        rows.append(score_slice(s, image, job.method, time.perf_counter() - t0, R=job.data.R, **job.tags))
    mean_nmse = float(np.mean([r.nmse for r in rows])) if rows else float("nan")
    logger.info(f"Run {job.label} finished: mean NMSE {mean_nmse:.4e} over {len(rows)} test slices")
    return rows


def run_parallel(fn: Callable[[J], R_], jobs: Sequence[J], workers: Optional[int] = None) -> List[R_]:
    """Map fn over jobs in worker processes; results keep job order"""
    workers = get_workers() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def _history_path(history_dir: Optional[Path], label: str) -> Optional[Path]:
    return None if history_dir is None else Path(history_dir) / f"{label}.history.csv"


def _collect(results: Sequence[List[MetricsRow]]) -> List[MetricsRow]:
    return [row for rows in results for row in rows]


# ============================================
# SWEEPS
# ============================================

def run_rho_sweep(
    data: ExperimentData,
    cfg: TrainConfig,
    rho_list: Sequence[float] = DEFAULT_RHOS,
    workers: Optional[int] = None,
    history_dir: Optional[Path] = None,
) -> List[MetricsRow]:
    """One SSDU training per rho; one row per (rho, test slice)"""
    jobs = []
    for rho in rho_list:
        run_cfg = updated(cfg, mode="ssdu", partition=updated(cfg.partition, rho=rho))
        label = f"rho_{rho}"
        jobs.append(RunJob(label, "ssdu", run_cfg, data,
                           {"rho": rho, "scheme": cfg.partition.scheme, "overlap": str(cfg.partition.overlap_fraction)},
                           _history_path(history_dir, label)))
    return _collect(run_parallel(run_job, jobs, workers))


def run_overlap_study(
    data: ExperimentData,
    cfg: TrainConfig,
    overlaps: Sequence[str] = DEFAULT_OVERLAPS,
    workers: Optional[int] = None,
    history_dir: Optional[Path] = None,
) -> List[MetricsRow]:
    """Disjoint, partially and fully overlapping Theta/Lambda, and Theta = Lambda = Omega"""
    jobs = []
    for overlap in overlaps:
        overlap = str(overlap)
        if overlap == "identical":
            policy = updated(cfg.partition, identical=True)
        else:
            policy = updated(cfg.partition, overlap_fraction=float(overlap), identical=False)
        run_cfg = updated(cfg, mode="ssdu", partition=policy)
        label = f"overlap_{overlap}"
        jobs.append(RunJob(label, "ssdu", run_cfg, data,
                           {"rho": policy.rho, "scheme": policy.scheme, "overlap": overlap},
                           _history_path(history_dir, label)))
    return _collect(run_parallel(run_job, jobs, workers))


def run_scheme_comparison(
    data: ExperimentData,
    cfg: TrainConfig,
    schemes: Sequence[str] = DEFAULT_SCHEMES,
    workers: Optional[int] = None,
    history_dir: Optional[Path] = None,
) -> List[MetricsRow]:
    """Uniform vs Gaussian Lambda selection at fixed rho"""
    jobs = []
    for scheme in schemes:
        policy = updated(cfg.partition, scheme=scheme)
        run_cfg = updated(cfg, mode="ssdu", partition=policy)
        label = f"scheme_{scheme}"
        jobs.append(RunJob(label, f"ssdu-{scheme}", run_cfg, data,
                           {"rho": policy.rho, "scheme": scheme, "overlap": str(policy.overlap_fraction)},
                           _history_path(history_dir, label)))
    return _collect(run_parallel(run_job, jobs, workers))


def run_method_comparison(
    data: ExperimentData,
    cfg: TrainConfig,
    modes: Sequence[str] = DEFAULT_MODES,
    workers: Optional[int] = None,
    history_dir: Optional[Path] = None,
) -> List[MetricsRow]:
    """One network per training mode, plus CG-SENSE and zero-filled rows"""
    jobs = []
    for mode in modes:
        run_cfg = updated(cfg, mode=mode)
        label = f"mode_{mode}"
        tags = {"rho": cfg.partition.rho, "scheme": cfg.partition.scheme} if mode == "ssdu" else {}
        jobs.append(RunJob(label, mode, run_cfg, data, tags, _history_path(history_dir, label)))
    rows = _collect(run_parallel(run_job, jobs, workers))
    return rows + baseline_rows(data.test, R=data.R)


def run_acceleration_sweep(
    records: Sequence[SliceRecord],
    cfg: TrainConfig,
    n_test: int,
    accelerations: Sequence[int] = DEFAULT_ACCELERATIONS,
    pattern: str = "sheared",
    acs_block: Tuple[int, int] = (16, 16),
    acs_lines: int = 8,
    workers: Optional[int] = None,
    history_dir: Optional[Path] = None,
) -> List[MetricsRow]:
    """
    SSDU trained per acceleration, next to CG-SENSE on the same masks

    Args:
        records: fully-sampled slices
        cfg: training configuration (mode forced to ssdu)
        n_test: held-out tail of records
        accelerations: R values
        pattern: sheared | equispaced
        acs_block: calibration block of the sheared pattern
        acs_lines: calibration lines of the equispaced pattern
    """
    if not records:
        raise UsageError("acceleration sweep needs at least one slice")
    H, W = records[0].full.image_shape
    jobs, datasets = [], []
    for R in accelerations:
        if pattern == "sheared":
            omega = sheared_mask(H, W, R, acs_block)
        elif pattern == "equispaced":
            omega = equispaced_mask(H, W, R, acs_lines)
        else:
            raise UsageError(f"unknown sampling pattern {pattern!r}")
        data = ExperimentData.build(records, omega, n_test, cfg.n_val)
        datasets.append(data)
        label = f"R_{R}"
        jobs.append(RunJob(label, "ssdu", updated(cfg, mode="ssdu"), data,
                           {"rho": cfg.partition.rho, "scheme": cfg.partition.scheme},
                           _history_path(history_dir, label)))

    rows = _collect(run_parallel(run_job, jobs, workers))
    for data in datasets:
        rows += baseline_rows(data.test, methods=("cg-sense",), R=data.R)
    return rows


# ============================================
# CROSS-VALIDATION
# ============================================

@dataclass(frozen=True)
class FoldJob:
    label: str
    cfg: TrainConfig
    fit: Tuple[TrainingSlice, ...]
    held_out: Tuple[TrainingSlice, ...]
    fold: int


def run_fold(job: FoldJob) -> MetricsRow:
    """Train on the other folds; score the held-out SSDU loss and, with references, NMSE/SSIM"""
    try:
        result = train(job.fit, job.cfg)
    except SSDUError as e:
        logger.error(f"Fold {job.label} failed: {e}")
        if isinstance(e, TrainingError):
            raise
        raise TrainingError(f"fold {job.label}: {e}", rho=job.cfg.partition.rho) from e

    prepared = [prepare_slice(s, job.cfg) for s in job.held_out]
    parts = slice_partitions(prepared, job.cfg, index_offset=len(job.fit))
    loss = mean_loss(prepared, parts, result.params, job.cfg)

    scored = [
        score_slice(s, reconstruct_slice("network", s, result.params, job.cfg.unroll), "ssdu-cv", None)
        for s in job.held_out
        if s.full is not None
    ]
    policy = job.cfg.partition
    row = MetricsRow(
        slice_id=f"fold{job.fold}",
        method="ssdu-cv",
        rho=policy.rho,
        scheme=policy.scheme,
        overlap=str(policy.overlap_fraction),
        loss=loss,
        nmse=float(np.mean([r.nmse for r in scored])) if scored else None,
        ssim=float(np.mean([r.ssim for r in scored])) if scored else None,
    )
    logger.info(f"Fold {job.label}: held-out loss {loss:.6f}")
    return row


def run_cross_validation(
    slices: Sequence[TrainingSlice],
    cfg: TrainConfig,
    folds: int = 5,
    rho_list: Sequence[float] = (0.2, 0.4, 0.6),
    schemes: Sequence[str] = DEFAULT_SCHEMES,
    workers: Optional[int] = None,
) -> List[MetricsRow]:
    """k-fold assessment of (scheme, rho) on training slices; one row per (scheme, rho, fold)"""
    if folds < 2 or folds > len(slices):
        raise UsageError(f"cannot split {len(slices)} slices into {folds} folds")
    index_folds = np.array_split(np.arange(len(slices)), folds)

    jobs = []
    for scheme in schemes:
        for rho in rho_list:
            policy = updated(cfg.partition, scheme=scheme, rho=rho)
            run_cfg = updated(cfg, mode="ssdu", partition=policy)
            for k, held in enumerate(index_folds):
                held_set = set(held.tolist())
                jobs.append(FoldJob(
                    label=f"{scheme}_rho_{rho}_fold{k}",
                    cfg=run_cfg,
                    fit=tuple(s for i, s in enumerate(slices) if i not in held_set),
                    held_out=tuple(slices[i] for i in held),
                    fold=k,
                ))
    return run_parallel(run_fold, jobs, workers)

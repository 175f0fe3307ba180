"""
Training loop
Self-supervised (SSDU) and supervised training of the unrolled network with Adam
"""
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from execution.config import TrainConfig
from execution.errors import SSDUError, TrainingError, UsageError
from execution.losses import ssdu_loss, supervised_loss
from execution.mri_operators import CoilMaps, KSpaceVolume, SamplingMask
from execution.optimizer import adam_step
from execution.partition import partition_mask
from execution.tensor import Tape, Tensor, backward
from execution.unrolled_network import MU_PARAM, ParamStore, init_params, report_parameter_count


@dataclass(frozen=True)
class TrainingSlice:
    """Undersampled k-space of one slice, its maps and (optionally) fully-sampled reference k-space"""

    kspace: KSpaceVolume
    maps: CoilMaps
    full: Optional[KSpaceVolume] = None

    @property
    def slice_id(self) -> str:
        return self.kspace.slice_id


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    mean_train_loss: float
    val_loss: Optional[float] = None


@dataclass
class TrainResult:
    params: ParamStore
    history: List[HistoryRow]
    partitions: Dict[str, Tuple[SamplingMask, SamplingMask]] = field(default_factory=dict)


def prepare_slice(s: TrainingSlice, cfg: TrainConfig) -> TrainingSlice:
    """
    Normalize a slice for training

    The undersampled k-space is scaled to unit peak; the fully-sampled reference is
    brought to the same units. SSDU runs never see the reference.
    """
    dtype = np.complex64 if cfg.precision == "float32" else np.complex128
    y = s.kspace.normalized().astype(dtype)
    full = None
    if cfg.mode != "ssdu":
        if s.full is None:
            raise UsageError(f"slice {s.slice_id}: mode {cfg.mode} needs fully-sampled reference k-space")
        full = KSpaceVolume(
            (s.full.physical() / y.scale).astype(dtype),
            s.full.acquired_mask,
            s.full.slice_id,
            scale=y.scale,
        )
    return TrainingSlice(kspace=y, maps=s.maps.astype(dtype), full=full)


def slice_partitions(
    slices: Sequence[TrainingSlice], cfg: TrainConfig, index_offset: int = 0
) -> List[Optional[Tuple[SamplingMask, SamplingMask]]]:
    """Fixed (Theta, Lambda) per slice for SSDU; None entries for supervised modes"""
    if cfg.mode != "ssdu":
        return [None] * len(slices)
    parts = []
    for i, s in enumerate(slices):
        try:
            parts.append(partition_mask(s.kspace.acquired_mask, cfg.partition, cfg.partition.slice_seed(index_offset + i)))
        except SSDUError as e:
            raise TrainingError(f"partition failed: {e}", slice_id=s.slice_id, rho=cfg.partition.rho) from e
    return parts


def slice_loss(
    s: TrainingSlice,
    part: Optional[Tuple[SamplingMask, SamplingMask]],
    params: ParamStore,
    cfg: TrainConfig,
    tape: Optional[Tape] = None,
) -> Tensor:
    if cfg.mode == "ssdu":
        theta, lam = part
        return ssdu_loss(s.kspace, s.maps, theta, lam, params, cfg.unroll, tape)
    return supervised_loss(s.full, None, cfg.mode, s.kspace, s.maps, params, cfg.unroll, tape)


def mean_loss(
    slices: Sequence[TrainingSlice],
    parts: Sequence[Optional[Tuple[SamplingMask, SamplingMask]]],
    params: ParamStore,
    cfg: TrainConfig,
) -> float:
    """Mean loss over prepared slices without recording a tape"""
    return float(np.mean([slice_loss(s, p, params, cfg).item() for s, p in zip(slices, parts)]))


def train(
    dataset: Sequence[TrainingSlice],
    cfg: TrainConfig,
    validation: Optional[Sequence[TrainingSlice]] = None,
    initial: Optional[ParamStore] = None,
) -> TrainResult:
    """
    Train the unrolled network one slice per step

    Partitions are drawn once per slice and kept across epochs; slice order is a
    seeded permutation per epoch. Validation loss uses the same mode as training
    (Lambda-loss for SSDU).

    Args:
        dataset: training slices
        cfg: hyperparameters
        validation: held-out slices scored after every epoch
        initial: start parameters (seeded Glorot init when None)

    Returns:
        TrainResult with final parameters and per-epoch history

    Raises:
        TrainingError: non-finite loss, or a slice whose partition or loss is undefined
    """
    if not dataset:
        raise UsageError("training set is empty")

    train_slices = [prepare_slice(s, cfg) for s in dataset]
    val_slices = [prepare_slice(s, cfg) for s in (validation or [])]
    train_parts = slice_partitions(train_slices, cfg)
    val_parts = slice_partitions(val_slices, cfg, index_offset=len(train_slices))

    params = initial.astype(cfg.precision) if initial is not None else init_params(
        cfg.resnet, seed=cfg.seed, mu_init=cfg.unroll.dc.mu, dtype=cfg.precision
    )
    if not cfg.unroll.train_mu:
        params.frozen.add(MU_PARAM)
    report_parameter_count(params)
    logger.info(
        f"Training {cfg.mode}: {len(train_slices)} slices, {len(val_slices)} validation, "
        f"{cfg.n_epochs} epochs, lr {cfg.learning_rate}, {cfg.precision}"
    )

    rng = np.random.default_rng(cfg.seed)
    history: List[HistoryRow] = []

    for epoch in range(1, cfg.n_epochs + 1):
        order = rng.permutation(len(train_slices)) if cfg.shuffle else np.arange(len(train_slices))
        losses = []
        for i in order:
            s = train_slices[i]
            tape = Tape()
            try:
                loss = slice_loss(s, train_parts[i], params, cfg, tape)
            except SSDUError as e:
                raise TrainingError(f"loss failed: {e}", slice_id=s.slice_id, rho=cfg.partition.rho) from e
            if not loss.is_finite():
                raise TrainingError(f"non-finite loss {loss.item()}", slice_id=s.slice_id, rho=cfg.partition.rho)

            params.zero_grad()
            backward(loss, params)
            adam_step(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            losses.append(float(loss.item()))
            logger.debug(f"epoch {epoch} slice {s.slice_id}: loss {losses[-1]:.6f}")

        val = mean_loss(val_slices, val_parts, params, cfg) if val_slices else None
        history.append(HistoryRow(epoch, float(np.mean(losses)), val))
        val_text = f", val {val:.6f}" if val is not None else ""
        logger.info(f"Epoch {epoch}/{cfg.n_epochs}: train {history[-1].mean_train_loss:.6f}{val_text}, mu {params.mu:.4g}")

    partitions = {s.slice_id: p for s, p in zip(train_slices, train_parts) if p is not None}
    return TrainResult(params=params, history=history, partitions=partitions)


def write_history_csv(history: Sequence[HistoryRow], path: Path) -> Path:
    """epoch,mean_train_loss,val_loss (empty when no validation set)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "mean_train_loss", "val_loss"])
        for row in history:
            writer.writerow([
                row.epoch,
                repr(row.mean_train_loss),
                "" if row.val_loss is None else repr(row.val_loss),
            ])
    logger.info(f"Loss history written to {path}")
    return path

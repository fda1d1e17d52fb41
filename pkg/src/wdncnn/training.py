"""Training data synthesis and the band-discriminative training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import engine
from .errors import DomainError, NumericError
from .model import SIGMA_MAX, ModelParameters, forward
from .wavelet import FilterBank, dwt2

log = logging.getLogger(__name__)

PHASES = ("pretrain", "finetune")

PHASE0_WEIGHTS = (1.5, 2.5, 2.5, 5.0)

# (LL, LH, HL, HH) band weights for consecutive fine-tuning blocks
TABLE1_WEIGHTS = (
    (2.0, 2.5, 2.5, 4.5),
    (3.5, 2.5, 2.5, 3.0),
    (4.5, 2.5, 2.5, 2.0),
    (5.5, 1.5, 1.5, 1.0),
    (6.0, 2.0, 2.0, 1.5),
    (6.5, 2.5, 2.5, 2.0),
    (7.0, 3.0, 3.0, 2.5),
    (7.5, 3.5, 3.5, 3.0),
    (8.0, 4.0, 4.0, 3.5),
    (8.5, 4.5, 4.5, 4.0),
)

UNIFORM_WEIGHTS = (1.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class TrainConfig:
    patch_size: int = 50
    patches_per_epoch: int = 128 * 2000
    batch_size: int = 128
    sigma_min: float = 0.0
    sigma_max: float = 75.0
    lr_initial: float = 1e-4
    lr_final: float = 1e-7
    epochs_per_bdt_block: int = 50
    pretrain_max_epochs: int = 1000
    convergence_window: int = 5
    convergence_tol: float = 1e-3
    finetune_epochs: int = 500
    use_bdt: bool = True
    augment: bool = True
    resample_each_epoch: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.sigma_min <= self.sigma_max <= SIGMA_MAX:
            raise DomainError(f"need 0 <= sigma_min <= sigma_max <= 75, got [{self.sigma_min}, {self.sigma_max}]")
        if self.batch_size < 1 or self.patches_per_epoch < 1 or self.patch_size < 2:
            raise DomainError("batch_size, patches_per_epoch and patch_size must be positive")
        if not self.lr_initial >= self.lr_final >= 0.0:
            raise DomainError("need lr_initial >= lr_final >= 0")
        if self.epochs_per_bdt_block < 1 or self.convergence_window < 1:
            raise DomainError("epochs_per_bdt_block and convergence_window must be >= 1")
        if self.pretrain_max_epochs < 0 or self.finetune_epochs < 0:
            raise DomainError("epoch counts must be non-negative")


@dataclass(frozen=True)
class BDTSchedule:
    phase0_weights: tuple[float, float, float, float] = PHASE0_WEIGHTS
    block_weights: tuple[tuple[float, float, float, float], ...] = TABLE1_WEIGHTS
    block_length: int = 50

    def __post_init__(self):
        rows = [self.phase0_weights, *self.block_weights]
        if not self.block_weights or any(len(r) != 4 for r in rows):
            raise DomainError("every weight row needs four entries (LL, LH, HL, HH)")
        if any(w <= 0 for r in rows for w in r):
            raise DomainError("band weights must be positive")
        if self.block_length < 1:
            raise DomainError("block_length must be >= 1")

    @property
    def last_epoch(self) -> int:
        return self.block_length * len(self.block_weights)

    def block_ranges(self) -> list[tuple[int, int]]:
        """Epoch range of each block as printed in the weight table: 1-50, 50-100, ..."""
        n = self.block_length
        return [(max(1, b * n), (b + 1) * n) for b in range(len(self.block_weights))]

    def block_index(self, epoch: int) -> int:
        return min(epoch // self.block_length, len(self.block_weights) - 1)


def bdt_weights(epoch: int, schedule: BDTSchedule, phase: str) -> tuple[float, float, float, float]:
    """Band weights (LL, LH, HL, HH) for a fine-tuning epoch, or the pretraining weights.

    An epoch on a block boundary belongs to the block that starts there.
    """
    if phase == "pretrain":
        return tuple(schedule.phase0_weights)
    if phase != "finetune":
        raise DomainError(f"unknown phase {phase!r}")
    if epoch < 1:
        raise DomainError(f"fine-tuning epochs start at 1, got {epoch}")
    if epoch > schedule.last_epoch:
        log.info("epoch %d is past the schedule (%d); using the last block", epoch, schedule.last_epoch)
    return tuple(schedule.block_weights[schedule.block_index(epoch)])


def learning_rate(epoch: int, config: TrainConfig, schedule: BDTSchedule, phase: str) -> float:
    """Constant during pretraining; log-spaced per block from lr_initial to lr_final when fine-tuning."""
    if phase == "pretrain":
        return config.lr_initial
    blocks = len(schedule.block_weights)
    if blocks == 1 or config.lr_initial == config.lr_final:
        return config.lr_initial
    if config.lr_final == 0.0:
        return config.lr_initial if schedule.block_index(epoch) < blocks - 1 else 0.0
    frac = schedule.block_index(epoch) / (blocks - 1)
    return config.lr_initial * (config.lr_final / config.lr_initial) ** frac


# --- data synthesis ---------------------------------------------------------


def _usable(images: Sequence[np.ndarray], size: int) -> list[int]:
    if len(images) == 0:
        raise DomainError("dataset is empty")
    usable = []
    for i, img in enumerate(images):
        if img.shape[-2] < size or img.shape[-1] < size:
            log.warning("skipping image %d of size %s: smaller than %dx%d patches", i, img.shape[-2:], size, size)
        else:
            usable.append(i)
    if not usable:
        raise DomainError(f"no image is at least {size}x{size}")
    return usable


def _crop(images, usable, size, rng) -> np.ndarray:
    img = images[usable[rng.integers(len(usable))]]
    top = rng.integers(img.shape[-2] - size + 1)
    left = rng.integers(img.shape[-1] - size + 1)
    return np.array(img[..., top : top + size, left : left + size], dtype=np.float64)


def sample_patches(images: Sequence[np.ndarray], count: int, size: int, seed) -> list[np.ndarray]:
    """Crop ``count`` patches; patch ``i`` depends only on (seed, i)."""
    if count == 0:
        return []
    usable = _usable(images, size)
    seed = list(np.atleast_1d(seed))
    return [_crop(images, usable, size, np.random.default_rng(seed + [i])) for i in range(count)]


def add_awgn(patch: np.ndarray, sigma_n: float, seed) -> np.ndarray:
    """y = x + n with n ~ N(0, (sigma_n/255)^2) i.i.d.; the result is not clipped."""
    if not 0.0 <= sigma_n <= SIGMA_MAX:
        raise DomainError(f"sigma_n must lie in [0, 75], got {sigma_n}")
    patch = np.asarray(patch, dtype=np.float64)
    if sigma_n == 0.0:
        return patch.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return patch + rng.standard_normal(patch.shape) * (sigma_n / 255.0)


def augment(patch: np.ndarray, op_id: int) -> np.ndarray:
    """Dihedral-group op on the last two axes: ``op_id % 4`` quarter turns, then a flip if ``op_id >= 4``."""
    if not 0 <= op_id < 8:
        raise DomainError(f"augmentation op must be in 0..7, got {op_id}")
    out = np.rot90(patch, k=op_id % 4, axes=(-2, -1))
    if op_id >= 4:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def inverse_augment_op(op_id: int) -> int:
    if not 0 <= op_id < 8:
        raise DomainError(f"augmentation op must be in 0..7, got {op_id}")
    # flips are involutions; pure rotations invert by rotating the other way
    return op_id if op_id >= 4 else (4 - op_id) % 4


def make_training_pair(clean_patch: np.ndarray, sigma_n: float, bank: FilterBank, seed=None):
    """Return (noisy sub-bands u, residual target u - w, normalised sigma)."""
    noisy = add_awgn(clean_patch, sigma_n, seed)
    u = dwt2(noisy, bank)
    w = dwt2(clean_patch, bank)
    return u, u - w, sigma_n / 255.0


# --- training loop ------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    phase: str
    lr: float
    mu: tuple[float, float, float, float]
    loss_total: float
    loss_bands: tuple[float, float, float, float]
    seconds: float = field(default=0.0, compare=False)


LOG_COLUMNS = (
    "epoch", "phase", "lr", "mu_ll", "mu_lh", "mu_hl", "mu_hh",
    "loss_total", "loss_ll", "loss_lh", "loss_hl", "loss_hh", "seconds",
)


def log_row(stats: EpochStats) -> list[str]:
    """One training-log CSV row; floats use repr so values round-trip exactly."""
    values = [stats.lr, *stats.mu, stats.loss_total, *stats.loss_bands]
    return [str(stats.epoch), stats.phase, *(repr(float(v)) for v in values), f"{stats.seconds:.3f}"]


def _phase_code(phase: str) -> int:
    return PHASES.index(phase)


def epoch_batches(images, bank: FilterBank, config: TrainConfig, epoch: int, phase: str):
    """Yield (noisy sub-bands, target residual, per-item normalised sigma) batches.

    Every patch is a pure function of (seed, phase, epoch, index), so the
    sequence does not depend on how the work is scheduled.
    """
    usable = _usable(images, config.patch_size)
    total = config.patches_per_epoch
    for start in range(0, total, config.batch_size):
        clean, noisy, sigmas = [], [], []
        for i in range(start, min(start + config.batch_size, total)):
            rng = np.random.default_rng([config.seed, _phase_code(phase), epoch, i])
            if config.resample_each_epoch:
                patch = _crop(images, usable, config.patch_size, rng)
            else:
                patch = _crop(images, usable, config.patch_size, np.random.default_rng([config.seed, 99, i]))
            if config.augment:
                patch = augment(patch, int(rng.integers(8)))
            sigma = float(rng.uniform(config.sigma_min, config.sigma_max))
            clean.append(patch)
            noisy.append(add_awgn(patch, sigma, rng))
            sigmas.append(sigma / 255.0)
        u = dwt2(np.stack(noisy), bank)
        w = dwt2(np.stack(clean), bank)
        yield u, u - w, np.array(sigmas)


def train_epoch(
    params: ModelParameters,
    images: Sequence[np.ndarray],
    bank: FilterBank,
    config: TrainConfig,
    schedule: BDTSchedule,
    epoch: int,
    phase: str,
) -> EpochStats:
    """One pass over freshly synthesised batches: forward, weighted loss, backward, ADAM."""
    t0 = time.perf_counter()
    mu = bdt_weights(epoch, schedule, phase) if config.use_bdt else UNIFORM_WEIGHTS
    lr = learning_rate(epoch, config, schedule, phase)
    weighted_sum = 0.0
    band_sums = np.zeros(4)
    seen = 0
    for b, (u, target, sigma) in enumerate(epoch_batches(images, bank, config, epoch, phase)):
        n = len(sigma)
        pred = forward(u, sigma, params).bands()
        loss = engine.weighted_band_mse(pred, target.bands(), mu, n)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss in {phase} epoch {epoch}, batch {b}")
        engine.backward(loss)
        engine.adam_step(params.parameters(), lr)
        weighted_sum += value * n
        band_sums += [0.5 * float(np.sum((p.data - t) ** 2)) for p, t in zip(pred, target.bands())]
        seen += n
    return EpochStats(
        epoch=epoch,
        phase=phase,
        lr=lr,
        mu=tuple(mu),
        loss_total=weighted_sum / seen,
        loss_bands=tuple(band_sums / seen),
        seconds=time.perf_counter() - t0,
    )


@dataclass
class TrainingState:
    """Everything needed to continue a run: model, optimiser moments (inside params), progress."""

    params: ModelParameters
    phase: str = "pretrain"
    epoch: int = 0
    global_epoch: int = 0
    pretrain_losses: list[float] = field(default_factory=list)
    finished: bool = False


def pretrain_converged(losses: Sequence[float], window: int, tol: float) -> bool:
    """Relative improvement over the last ``window`` epochs fell below ``tol``."""
    if len(losses) <= window:
        return False
    old, new = losses[-window - 1], losses[-1]
    return old <= 0 or (old - new) / old < tol


def run_training(
    state: TrainingState,
    images: Sequence[np.ndarray],
    bank: FilterBank,
    config: TrainConfig,
    schedule: BDTSchedule,
    max_epochs: int | None = None,
    on_epoch: Callable[[TrainingState, EpochStats], None] | None = None,
) -> TrainingState:
    """Pretrain until convergence (or the cap), then fine-tune through the schedule.

    ``max_epochs`` bounds the epochs run by this call, so a run can be split
    across several invocations.
    """
    if state.phase == "pretrain" and config.pretrain_max_epochs == 0:
        state.phase = "finetune"
    ran = 0
    while not state.finished and (max_epochs is None or ran < max_epochs):
        if state.phase == "finetune" and state.epoch >= config.finetune_epochs:
            state.finished = True
            break
        epoch = state.epoch + 1
        stats = train_epoch(state.params, images, bank, config, schedule, epoch, state.phase)
        state.epoch = epoch
        state.global_epoch += 1
        ran += 1
        if state.phase == "pretrain":
            state.pretrain_losses.append(stats.loss_total)
            done = epoch >= config.pretrain_max_epochs or pretrain_converged(
                state.pretrain_losses, config.convergence_window, config.convergence_tol
            )
            if done:
                log.info("pretraining stopped after %d epochs", epoch)
                state.phase, state.epoch = "finetune", 0
                state.finished = config.finetune_epochs == 0
        elif epoch >= config.finetune_epochs:
            state.finished = True
        if on_epoch is not None:
            on_epoch(state, stats)
    return state

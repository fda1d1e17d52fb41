"""PSNR scoring, dataset evaluation reports and training-curve comparison."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError
from .imageio import list_images, read_image
from .model import ModelParameters, denoise
from .training import add_awgn
from .wavelet import FilterBank

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("name", "sigma", "psnr_noisy", "psnr_denoised")
AVERAGE_NAME = "AVERAGE"


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; identical inputs give ``math.inf``.

    With peak 1 on [0, 1] intensities this equals the usual 255-peak value
    on 8-bit intensities, since only the ratio peak^2 / MSE matters.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes differ, {a.shape} vs {b.shape}")
    if peak <= 0:
        raise DomainError(f"peak must be positive, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def noise_seed(name: str, sigma: float, seed: int) -> int:
    """Stable per-(image, sigma) seed, identical across runs and machines."""
    digest = hashlib.sha256(f"{name}|{float(sigma)!r}|{int(seed)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class ScoredImage:
    noisy: np.ndarray
    denoised: np.ndarray
    psnr_noisy: float
    psnr_denoised: float


def score_image(
    clean: np.ndarray,
    name: str,
    sigma: float,
    params: ModelParameters,
    bank: FilterBank,
    seed: int,
    clamp: bool = True,
) -> ScoredImage:
    """Corrupt ``clean`` with seeded AWGN, denoise it and score both against ``clean``.

    With ``clamp`` the noisy and denoised images are clipped to [0, 1] before
    scoring, as they would be when written to disk.
    """
    noisy = add_awgn(clean, sigma, noise_seed(name, sigma, seed))
    denoised = denoise(noisy, sigma, params, bank, clamp=clamp)
    shown = np.clip(noisy, 0.0, 1.0) if clamp else noisy
    return ScoredImage(noisy, denoised, psnr(clean, shown), psnr(clean, denoised))


@dataclass
class EvalRow:
    name: str
    sigma: float
    psnr_noisy: float
    psnr_denoised: float


@dataclass
class EvalReport:
    rows: list[EvalRow]
    config_digest: str = ""
    model_digest: str = ""
    averages: dict[float, tuple[float, float]] = field(init=False)

    def __post_init__(self):
        self.averages = {}
        for sigma in dict.fromkeys(r.sigma for r in self.rows):
            sel = [r for r in self.rows if r.sigma == sigma]
            self.averages[sigma] = (
                sum(r.psnr_noisy for r in sel) / len(sel),
                sum(r.psnr_denoised for r in sel) / len(sel),
            )

    def to_csv(self) -> str:
        """Per-image rows (sorted by name, then sigma) followed by one AVERAGE row per sigma."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in self.rows:
            writer.writerow([r.name, repr(float(r.sigma)), repr(r.psnr_noisy), repr(r.psnr_denoised)])
        for sigma, (noisy, den) in self.averages.items():
            writer.writerow([AVERAGE_NAME, repr(float(sigma)), repr(noisy), repr(den)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [
            f"config digest: {self.config_digest or '-'}",
            f"model digest:  {self.model_digest or '-'}",
            "",
            f"{'image':<20} {'sigma':>6} {'noisy dB':>10} {'denoised dB':>12} {'gain':>7}",
        ]
        for r in self.rows:
            lines.append(
                f"{r.name:<20} {r.sigma:>6g} {r.psnr_noisy:>10.3f} {r.psnr_denoised:>12.3f} "
                f"{r.psnr_denoised - r.psnr_noisy:>7.3f}"
            )
        for sigma, (noisy, den) in self.averages.items():
            lines.append(f"{'Ave.':<20} {sigma:>6g} {noisy:>10.3f} {den:>12.3f} {den - noisy:>7.3f}")
        return "\n".join(lines) + "\n"


def load_dataset(image_dir: str | os.PathLike) -> list[tuple[str, np.ndarray]]:
    """Read every PGM/PPM in ``image_dir`` (sorted by name); unreadable files are skipped."""
    image_dir = Path(image_dir)
    if not image_dir.is_dir():
        raise DomainError(f"{image_dir} is not a directory")
    paths = list_images(image_dir)
    if not paths:
        raise DomainError(f"no PGM/PPM images in {image_dir}")
    images = []
    for path in paths:
        try:
            images.append((path.name, read_image(path)))
        except (OSError, DomainError) as exc:
            log.warning("skipping %s: %s", path, exc)
    return images


def evaluate_dataset(
    params: ModelParameters,
    image_dir: str | os.PathLike,
    sigmas: Sequence[float],
    bank: FilterBank,
    seed: int,
    clamp: bool = True,
    config_digest: str = "",
) -> EvalReport:
    rows = []
    for name, clean in load_dataset(image_dir):
        for sigma in sigmas:
            scored = score_image(clean, name, sigma, params, bank, seed, clamp)
            rows.append(EvalRow(name, float(sigma), scored.psnr_noisy, scored.psnr_denoised))
    if not rows:
        raise DomainError(f"no readable images in {image_dir}")
    return EvalReport(rows, config_digest=config_digest, model_digest=params.digest())


# --- training curves -------------------------------------------------------------


@dataclass
class CurveSummary:
    label: str
    final_loss: float
    tail_variance: float
    tail_length: int


@dataclass
class CurveComparison:
    keys: list[tuple[str, int]]
    loss_a: np.ndarray
    loss_b: np.ndarray
    summary_a: CurveSummary
    summary_b: CurveSummary

    @property
    def difference(self) -> np.ndarray:
        return self.loss_a - self.loss_b

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["index", "phase", "epoch", "loss_a", "loss_b", "difference"])
        for i, ((phase, epoch), a, b) in enumerate(zip(self.keys, self.loss_a, self.loss_b)):
            writer.writerow([i + 1, phase, epoch, repr(float(a)), repr(float(b)), repr(float(a - b))])
        return buf.getvalue()


def read_training_log(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _summarise(rows: list[dict], losses: np.ndarray) -> CurveSummary:
    mus = [tuple(float(r[k]) for k in ("mu_ll", "mu_lh", "mu_hl", "mu_hh")) for r in rows]
    label = "bdt" if any(len(set(m)) > 1 for m in mus) else "uniform"
    tail = max(1, math.ceil(0.2 * len(losses)))
    return CurveSummary(label, float(losses[-1]), float(np.var(losses[-tail:])), tail)


def compare_training_curves(
    log_a: str | os.PathLike,
    log_b: str | os.PathLike,
    out_path: str | os.PathLike | None = None,
    column: str = "loss_total",
) -> CurveComparison:
    """Align two training logs epoch by epoch and summarise each.

    A run is labelled ``bdt`` when any epoch used unequal band weights,
    otherwise ``uniform``. The tail variance is the population variance of
    the last 20% of epochs (at least one).
    """
    rows_a, rows_b = read_training_log(log_a), read_training_log(log_b)
    keys_a = [(r["phase"], int(r["epoch"])) for r in rows_a]
    keys_b = [(r["phase"], int(r["epoch"])) for r in rows_b]
    if not keys_a or keys_a != keys_b:
        raise DomainError(f"training logs cover different epochs ({len(keys_a)} vs {len(keys_b)} rows)")
    loss_a = np.array([float(r[column]) for r in rows_a])
    loss_b = np.array([float(r[column]) for r in rows_b])
    result = CurveComparison(keys_a, loss_a, loss_b, _summarise(rows_a, loss_a), _summarise(rows_b, loss_b))
    if out_path is not None:
        Path(out_path).write_text(result.to_csv())
    return result

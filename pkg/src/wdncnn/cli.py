"""Command-line entry point: ``wdncnn {train,denoise,eval,gradcheck,dwt}``.

Exit codes: 0 success, 1 usage/config error, 2 data/integrity error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import ConfigError, RunConfig, WaveletConfig, load_run_config, parse_run_config
from .engine import corrupt_backward
from .errors import DomainError, IntegrityError, NumericError, ShapeError, UnknownFilterError
from .evaluation import evaluate_dataset, load_dataset, psnr, score_image
from .gradcheck import TOLERANCE, model_gradcheck
from .imageio import read_image, write_image
from .model import WDnCNNConfig, build_model, denoise
from .training import LOG_COLUMNS, TrainingState, log_row, run_training
from .wavelet import BANDS, dwt2, idwt2, load_filterbank, subband_energy_ratio

log = logging.getLogger("wdncnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

LATEST = "latest.ckpt"
LOG_NAME = "train_log.csv"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _echo_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


def _checkpoint_extra(cfg: RunConfig, state: TrainingState) -> dict:
    return {
        "bank": cfg.wavelet.bank,
        "run_config": cfg.to_dict(),
        "rng": {"seed": cfg.train.seed, "phase": state.phase, "next_epoch": state.epoch + 1},
    }


def _run_config_from_checkpoint(extra: dict) -> RunConfig:
    if "run_config" not in extra:
        return RunConfig(wavelet=WaveletConfig(bank=extra.get("bank", "dmey")))
    return parse_run_config(extra["run_config"])


# --- train -----------------------------------------------------------------------


def _truncate_log(path: Path, rows: int) -> None:
    if not path.exists():
        return
    with open(path, newline="") as fh:
        kept = list(csv.reader(fh))[: rows + 1]
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(kept)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed)
    if not cfg.io.train_dir:
        raise ConfigError("io.train_dir: required for training")
    images = [img for _, img in load_dataset(cfg.io.train_dir)]
    bank = load_filterbank(cfg.wavelet.bank)
    digest = cfg.digest()
    out = Path(args.out)
    latest = out / LATEST
    log_path = out / LOG_NAME

    if args.resume and latest.exists():
        state, stored_digest, _ = ckpt.load_checkpoint(latest)
        if stored_digest != digest:
            raise IntegrityError(f"{latest} was written with a different configuration")
        _truncate_log(log_path, state.global_epoch)
        print(f"resuming at {state.phase} epoch {state.epoch + 1} (global {state.global_epoch})")
    else:
        state = TrainingState(build_model(cfg.model, cfg.train.seed))
        out.mkdir(parents=True, exist_ok=True)
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(LOG_COLUMNS)
    text = _echo_config(cfg)
    (out / "config.json").write_text(text + "\n")
    print(text)

    def on_epoch(st, stats):
        extra = _checkpoint_extra(cfg, st)
        ckpt.save_checkpoint(latest, st, digest, extra)
        with open(log_path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(log_row(stats))
        # a block ends when the next epoch starts a new one (boundary epochs open the later block)
        block_end = stats.phase == "finetune" and (stats.epoch + 1) % cfg.schedule.block_length == 0
        if block_end:
            shutil.copyfile(latest, out / f"finetune_epoch{stats.epoch:04d}.ckpt")
        if stats.phase == "pretrain" and st.phase == "finetune":
            shutil.copyfile(latest, out / "pretrain_final.ckpt")
        if st.finished:
            shutil.copyfile(latest, out / "final.ckpt")
        print(
            f"[{stats.phase} {stats.epoch}] lr={stats.lr:.3g} mu={stats.mu} "
            f"loss={stats.loss_total:.6g} ({stats.seconds:.1f}s)"
        )

    run_training(state, images, bank, cfg.train, cfg.schedule, max_epochs=args.max_epochs, on_epoch=on_epoch)
    if state.finished and not (out / "final.ckpt").exists():
        ckpt.save_checkpoint(out / "final.ckpt", state, digest, _checkpoint_extra(cfg, state))
    print(f"{'finished' if state.finished else 'stopped'} after {state.global_epoch} epochs; checkpoint {latest}")
    return EXIT_OK


# --- denoise / eval --------------------------------------------------------------


def _load_model(args):
    state, digest, extra = ckpt.load_checkpoint(args.checkpoint)
    if getattr(args, "config", None):
        cfg = load_run_config(args.config)
        if cfg.digest() != digest:
            raise IntegrityError(f"{args.checkpoint} does not match configuration {args.config}")
    else:
        cfg = _run_config_from_checkpoint(extra)
    return state.params, load_filterbank(extra.get("bank", cfg.wavelet.bank)), cfg, digest


def _check_sigma(sigma: float) -> None:
    if not 0.0 <= sigma <= 75.0:
        raise ConfigError(f"--sigma must lie in [0, 75], got {sigma}")


def cmd_denoise(args) -> int:
    _check_sigma(args.sigma)
    params, bank, cfg, _ = _load_model(args)
    image = read_image(args.input)
    clamp = not args.no_clamp
    seed = args.seed if args.seed is not None else 0
    if args.add_noise:
        reference = read_image(args.reference) if args.reference else image
        scored = score_image(reference, Path(args.input).name, args.sigma, params, bank, seed, clamp)
        write_image(args.out, scored.denoised)
        print(f"psnr_noisy {scored.psnr_noisy!r}")
        print(f"psnr_denoised {scored.psnr_denoised!r}")
        return EXIT_OK
    result = denoise(image, args.sigma, params, bank, clamp=clamp)
    write_image(args.out, result)
    if args.reference:
        reference = read_image(args.reference)
        print(f"psnr_noisy {psnr(reference, image)!r}")
        print(f"psnr_denoised {psnr(reference, result)!r}")
    return EXIT_OK


def _parse_sigmas(text: str) -> list[float]:
    try:
        sigmas = [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--sigmas: {exc}") from exc
    for s in sigmas:
        _check_sigma(s)
    return sigmas


def cmd_eval(args) -> int:
    params, bank, cfg, digest = _load_model(args)
    sigmas = _parse_sigmas(args.sigmas) if args.sigmas else list(cfg.eval.sigmas)
    seed = args.seed if args.seed is not None else 0
    report = evaluate_dataset(params, args.dataset, sigmas, bank, seed, clamp=cfg.eval.clamp, config_digest=digest)
    text = report.to_text()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report.to_csv())
        (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


# --- diagnostics -----------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    model_cfg = load_run_config(args.config).model if args.config else WDnCNNConfig.miniature()
    seed = args.seed if args.seed is not None else 0
    if args.inject_fault:
        with corrupt_backward("conv2d", 1.01):
            reports = model_gradcheck(model_cfg, seed=seed)
    else:
        reports = model_gradcheck(model_cfg, seed=seed)
    for r in reports:
        print(f"{r.name:<24} n={r.size:<6} worst_rel={r.worst_rel_error:.3e} {'ok' if r.passed else 'FAIL'}")
    failed = [r.name for r in reports if not r.passed]
    if failed:
        print(f"gradient check failed (tolerance {TOLERANCE:g}): {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all {len(reports)} parameter tensors within {TOLERANCE:g}")
    return EXIT_OK


def cmd_dwt(args) -> int:
    bank = load_filterbank(args.bank)
    image = read_image(args.input)
    sub = dwt2(image, bank)
    err = float(np.max(np.abs(idwt2(sub, bank) - image)))
    energy = subband_energy_ratio(image, bank)
    print(f"bank {bank.name} ({bank.length} taps), sub-band size {sub.shape[-2]}x{sub.shape[-1]}")
    print(f"round_trip_max_abs_error {err!r}")
    print(f"energy_ratio {energy.ratio!r}")
    print(f"ll_energy_share {energy.ll_share!r}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        suffix = ".pgm" if image.shape[0] == 1 else ".ppm"
        for name, band in zip(BANDS, sub.bands()):
            lo, hi = float(band.min()), float(band.max())
            scale = 1.0 / (hi - lo) if hi > lo else 0.0
            write_image(out / f"{name}{suffix}", (band - lo) * scale)
            print(f"{name}: pixel = (coef - {lo!r}) * {scale!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wdncnn", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="global seed (training data, evaluation noise)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="pretrain, then fine-tune with band-discriminative weights")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory for checkpoints and the training log")
    p.add_argument("--resume", action="store_true", help="continue from OUT/latest.ckpt")
    p.add_argument("--max-epochs", type=int, default=None, help="stop after this many epochs in this invocation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="denoise one PGM/PPM image")
    p.add_argument("input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sigma", type=float, required=True, help="noise level on the 0-255 scale")
    p.add_argument("--out", required=True)
    p.add_argument("--reference", help="clean image; prints PSNR before and after")
    p.add_argument("--add-noise", action="store_true", help="treat INPUT as clean and add seeded AWGN first")
    p.add_argument("--config", help="run config that must match the checkpoint")
    p.add_argument("--no-clamp", action="store_true", help="score and write without clipping to [0, 1]")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="PSNR report over a directory of clean images")
    p.add_argument("dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sigmas", help="comma-separated noise levels (default: from the checkpoint's config)")
    p.add_argument("--out", help="directory for report.csv and report.txt")
    p.add_argument("--config", help="run config that must match the checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    p.add_argument("--config", help="run config whose model section is checked (default: miniature)")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dwt", help="wavelet round-trip and energy diagnostics")
    p.add_argument("input")
    p.add_argument("--bank", default="dmey")
    p.add_argument("--out", help="directory for the rescaled band images")
    p.set_defaults(func=cmd_dwt)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UnknownFilterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IntegrityError, DomainError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

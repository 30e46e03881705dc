"""``stegattn`` command line.

Exit codes: 0 success, 1 usage error, 2 data or checkpoint error, 3 numeric
failure (non-finite loss, failed gradient check, a failed comparison row).
Machine-readable output goes to the files named by flags or to stdout;
diagnostics and progress go to stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .attention import AttentionMode
from .errors import CheckpointError, DataError, NumericError, ShapeError, StegError, UsageError
from .metrics import psnr, ssim
from .model import StegoModel
from .pipeline import (
    TrainConfig,
    compare,
    load_checkpoint,
    load_image,
    make_toy_dataset,
    parallel_vs_baseline,
    save_checkpoint,
    save_image,
    train,
)

log = logging.getLogger("stegattn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "STEGATTN_THREADS"


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for data errors here
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _mode(token: str) -> AttentionMode:
    try:
        return AttentionMode.parse(token)
    except UsageError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="folder of RGB images")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--beta", type=float, default=1.0, help="weight of the secret reconstruction term")
    p.add_argument("--ratio", type=int, default=8, help="channel-attention reduction ratio")
    p.add_argument("--decoder-attention", action="store_true",
                   help="also place attention between the reveal blocks")


def _config(args, mode: AttentionMode = AttentionMode.BASELINE) -> TrainConfig:
    return TrainConfig(seed=args.seed, image_size=args.image_size,
                       batch_size=args.batch, steps=args.steps, learning_rate=args.lr,
                       beta=args.beta, mode=mode, data_dir=args.data,
                       reduction_ratio=args.ratio, decoder_attention=args.decoder_attention)


def loss_log_path(checkpoint: str | Path) -> Path:
    """Where ``train`` writes the step,loss CSV for a checkpoint path."""
    checkpoint = Path(checkpoint)
    return checkpoint.with_name(checkpoint.stem + ".loss.csv")


def _write_loss_csv(path: Path, losses: Sequence[float]) -> None:
    # repr round-trips a float exactly, so equal runs give equal bytes
    lines = ["step,loss"] + [f"{i},{v!r}" for i, v in enumerate(losses)]
    path.write_text("\n".join(lines) + "\n")


def cmd_train(args) -> int:
    config = _config(args, args.mode)
    params, losses = train(config)
    save_checkpoint(params, config, args.out)
    _write_loss_csv(loss_log_path(args.out), losses)
    print(f"trained {config.mode.value} for {len(losses)} steps: "
          f"loss {losses[0]:.5f} -> {losses[-1]:.5f}; checkpoint {args.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    run = compare(_config(args))
    Path(args.out).write_text(run.to_csv())
    if args.report:
        report = {
            "config": _config(args).to_dict(),
            "seconds": run.seconds,
            "train_pairs": run.train_indices.tolist(),
            "eval_pairs": run.eval_indices.tolist(),
            "modes": [{
                "mode": r.mode.value,
                "seconds": r.seconds,
                "error": r.error,
                "loss_log": r.loss_log,
            } for r in run.results],
        }
        Path(args.report).write_text(json.dumps(report, indent=1) + "\n")
    sys.stdout.write(run.to_csv())
    failed = [r.mode.value for r in run.results if not r.ok]
    if failed:
        log.error("modes failed: %s", ", ".join(failed))
        return EXIT_NUMERIC
    return EXIT_OK


def _load_model(path: str) -> tuple[StegoModel, TrainConfig]:
    params, config = load_checkpoint(path)
    return StegoModel(params), config


def _image(path: str, size: int) -> np.ndarray:
    return load_image(path, size)[None]


def _roundtrip(x: np.ndarray) -> np.ndarray:
    """Float image -> values as they will be stored in an 8-bit PNG."""
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.float32) / 255.0


def cmd_hide(args) -> int:
    model, config = _load_model(args.checkpoint)
    cover = _image(args.cover, config.image_size)
    secret = _image(args.secret, config.image_size)
    stego = model.hide(cover, secret)
    save_image(args.out, stego)
    stored = _roundtrip(stego)
    print(f"psnr_cover={psnr(cover, stored):.3f} ssim_cover={ssim(cover, stored):.3f}")
    return EXIT_OK


def cmd_reveal(args) -> int:
    model, config = _load_model(args.checkpoint)
    stego = _image(args.stego, config.image_size)
    revealed = model.reveal(stego)
    save_image(args.out, revealed)
    if args.secret:
        secret = _image(args.secret, config.image_size)
        stored = _roundtrip(revealed)
        print(f"psnr_secret={psnr(secret, stored):.3f} ssim_secret={ssim(secret, stored):.3f}")
    else:
        print(f"revealed secret written to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import verify

    results = verify.run(full=args.full, seed=args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {r.worst:.3e}  {'ok' if r.passed else 'FAIL'}")
    failed = [r for r in results if not r.passed]
    print(f"worst relative error {max(r.worst for r in results):.3e} over {len(results)} checks")
    if failed:
        for r in failed:
            bad = [k for k, v in r.per_input.items() if not v <= r.tolerance]
            log.error("gradient check failed for %s (inputs: %s)", r.name, ", ".join(bad))
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_toy_data(args) -> int:
    paths = make_toy_dataset(args.out, args.count, args.size, args.seed)
    print(f"wrote {len(paths)} images to {args.out}")
    return EXIT_OK


def cmd_trend(args) -> int:
    records = parallel_vs_baseline(_config(args), args.seeds)
    lines = ["seed,mse_secret_baseline,mse_secret_parallel,parallel_lower"]
    lines += [f"{r.seed},{r.baseline_mse_secret!r},{r.parallel_mse_secret!r},{int(r.parallel_lower)}"
              for r in records]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stegattn", description="Attention-augmented image steganography.")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one attention mode and write a checkpoint")
    _add_train_flags(p)
    p.add_argument("--mode", type=_mode, required=True,
                   help="one of: " + ", ".join(m.value for m in AttentionMode))
    p.add_argument("--out", required=True, help="checkpoint path; the loss log goes beside it")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="train all six modes and write the metrics table")
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--report", help="optional JSON run report with per-mode loss logs")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("hide", help="embed a secret image in a cover image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cover", required=True)
    p.add_argument("--secret", required=True)
    p.add_argument("--out", required=True, help="stego PNG path")
    p.set_defaults(func=cmd_hide)

    p = sub.add_parser("reveal", help="recover the secret from a stego image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stego", required=True)
    p.add_argument("--out", required=True, help="revealed PNG path")
    p.add_argument("--secret", help="original secret, to print reconstruction metrics")
    p.set_defaults(func=cmd_reveal)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward rule")
    p.add_argument("--full", action="store_true", help="add the end-to-end model check per mode")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("toy-data", help="write a synthetic image folder")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_toy_data)

    p = sub.add_parser("trend", help="secret MSE of Parallel vs Baseline over several seeds")
    _add_train_flags(p)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_trend)
    return parser


def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


class _StderrHandler(logging.StreamHandler):
    pass


def _setup_logging(quiet: bool) -> None:
    # a handler on the package logger (not basicConfig) so embedding apps keep their root config
    pkg = logging.getLogger("stegattn")
    for h in [h for h in pkg.handlers if isinstance(h, _StderrHandler)]:
        pkg.removeHandler(h)
    handler = _StderrHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    pkg.addHandler(handler)
    pkg.setLevel(logging.WARNING if quiet else logging.INFO)


def exit_code_for(exc: BaseException) -> int:
    # order matters: checkpoint shape errors are also ShapeErrors, and too-few-images is
    # both a usage and a data error
    if isinstance(exc, (CheckpointError, DataError)):
        return EXIT_DATA
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (UsageError, ShapeError)):
        return EXIT_USAGE
    return EXIT_NUMERIC


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.quiet)
    try:
        with _thread_limit():
            return args.func(args)
    except StegError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exit_code_for(exc)
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``dirlatent <verb> [options]``.

Exit codes: 0 success, 1 selftest failure, 2 configuration or usage error,
3 numeric abort. Errors are reported on stderr as one JSON object
``{"error": ..., "detail": ...}``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import TrainConfig, load_config
from .data import generate_toy_sequence, degrade_for_task
from .errors import ConfigError, ContractError, DomainError, NumericError
from .io import ModelCheckpoint, append_jsonl, ensure_dir, read_frames, write_frames

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse prints usage and exits on its own; route through our JSON errors
    def error(self, message):
        raise UsageError(message)


def frames_digest(frames: np.ndarray) -> str:
    """sha256 of the frames as contiguous little-endian float64."""
    return hashlib.sha256(np.ascontiguousarray(frames, dtype="<f8").tobytes()).hexdigest()


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-key override, repeatable (e.g. --set loss.prior_alpha=10)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", metavar="DIR", required=out_required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dirlatent", description="Dirichlet-latent video restoration toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write synthetic clean/degraded clips")
    _common(p)
    p.add_argument("--clips", type=int, default=4)
    p.add_argument("--length", type=int, default=8)
    p.add_argument("--format", choices=("ppm", "dlt"), default="ppm")

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _common(p)

    p = sub.add_parser("infer", help="restore a directory of frames")
    _common(p)
    p.add_argument("--ckpt", required=True, metavar="PATH")
    p.add_argument("--input", required=True, metavar="DIR", help="directory of numbered frames")
    p.add_argument("--mode", default="mean", help="sample | mean | argmax | topk-K")
    p.add_argument("--format", choices=("ppm", "dlt"), default="dlt")

    p = sub.add_parser("eval", help="score a checkpoint on held-out synthetic clips")
    _common(p)
    p.add_argument("--ckpt", required=True, metavar="PATH")
    p.add_argument("--mode", default="mean")
    p.add_argument("--clips", type=int, default=None, help="number of held-out clips")

    p = sub.add_parser("ablate", help="prior-concentration and weight-mode sweeps")
    _common(p)
    p.add_argument("--clips", type=int, default=None, help="number of held-out clips")

    p = sub.add_parser("selftest", help="run the built-in oracle suites")
    p.add_argument("--out", metavar="DIR", help="optional directory for a JSON report")
    return parser


def _resolve(args) -> TrainConfig:
    return load_config(args.config, args.overrides, args.seed)


def _snapshot(out: Path, data: dict) -> None:
    ensure_dir(out)
    (out / "config.resolved.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    _snapshot(out, cfg.to_dict())
    gen_rng, deg_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    for i in range(args.clips):
        clean = generate_toy_sequence(gen_rng, args.length, tuple(cfg.net.input_hw)).frames
        degraded = degrade_for_task(clean, cfg.task, cfg.degrade, deg_rng)
        fmt = "dlt" if degraded.shape[-1] not in (1, 3) else args.format
        write_frames(out / f"clip_{i:03d}" / "clean", clean, args.format)
        write_frames(out / f"clip_{i:03d}" / "degraded", degraded, fmt)
    print(json.dumps({"clips": args.clips, "out": str(out)}))
    return EXIT_OK


def _cmd_train(args) -> int:
    from .training import train

    cfg = _resolve(args)
    out = Path(args.out)
    _snapshot(out, cfg.to_dict())
    log_path = out / "train_log.jsonl"
    log_path.unlink(missing_ok=True)
    result = train(cfg, log_path=log_path)
    ckpt_path = out / "model.dlc"
    result.checkpoint.save(ckpt_path)
    print(json.dumps({"checkpoint": str(ckpt_path), "digest": result.checkpoint.digest(),
                      "final_loss": result.log[-1]["total"]}))
    return EXIT_OK


def _checkpoint_config(args) -> tuple[ModelCheckpoint, TrainConfig]:
    ckpt = ModelCheckpoint.load(args.ckpt)
    from .config import apply_overrides

    data = apply_overrides(ckpt.config, args.overrides)
    if args.seed is not None:
        data["seed"] = args.seed
    return ckpt, TrainConfig.from_dict(data)


def _cmd_infer(args) -> int:
    from .inference import infer_video
    from .training import model_from_checkpoint

    ckpt, cfg = _checkpoint_config(args)
    out = Path(args.out)
    _snapshot(out, {**cfg.to_dict(), "infer": {"mode": args.mode, "input": str(args.input)}})
    frames = read_frames(args.input)
    pred = infer_video(frames, model_from_checkpoint(ckpt), args.mode,
                       np.random.default_rng(cfg.seed)).frames
    write_frames(out / "frames", pred, args.format)
    digest = frames_digest(pred)
    (out / "digest.txt").write_text(digest + "\n")
    print(json.dumps({"frames": int(pred.shape[0]), "digest": digest}))
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .evaluation import UNAVAILABLE_METRICS, aggregate, evaluate_model
    from .training import model_from_checkpoint, train_and_val_sets

    ckpt, cfg = _checkpoint_config(args)
    if args.clips is not None:
        cfg.n_val_clips = args.clips
    out = Path(args.out)
    _snapshot(out, {**cfg.to_dict(), "eval": {"mode": args.mode}})
    _, val = train_and_val_sets(cfg)
    reports = evaluate_model(model_from_checkpoint(ckpt), val, args.mode, cfg.seed)
    unavailable = {k: "unavailable" for k in UNAVAILABLE_METRICS}
    path = out / "metrics.jsonl"
    path.unlink(missing_ok=True)
    records = [{"clip": i, **r.to_dict(), **unavailable} for i, r in enumerate(reports)]
    records.append({"clip": "aggregate", **aggregate(reports).to_dict(), **unavailable})
    append_jsonl(path, records)
    print(json.dumps(records[-1]))
    return EXIT_OK


def _cmd_ablate(args) -> int:
    from .evaluation import format_table, run_ablation

    cfg = _resolve(args)
    out = Path(args.out)
    _snapshot(out, cfg.to_dict())

    def progress(row):
        logging.getLogger("dirlatent.ablate").info("%s %s done (%s)", row.sweep, row.variant, row.status)

    rows = run_ablation(cfg, val_clips=args.clips, progress=progress)
    table = format_table(rows)
    (out / "ablation.json").write_text(json.dumps([r.to_dict() for r in rows], indent=2) + "\n")
    (out / "ablation.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK if all(r.status == "ok" for r in rows) else EXIT_FAILED


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest()
    for r in results:
        print(json.dumps(r.to_dict()))
    if args.out:
        out = ensure_dir(args.out)
        (out / "selftest.json").write_text(json.dumps([r.to_dict() for r in results], indent=2) + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "selftest": _cmd_selftest,
}


def _fail(kind: str, detail: str, code: int, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "detail": detail, **extra}) + "\n")
    return code


def parse_and_dispatch(argv: list[str] | None = None) -> int:
    """Run one subcommand and return its exit code (never raises for
    configuration, usage or numeric failures)."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_CONFIG)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.verb](args)
    except NumericError as exc:
        extra = {"step": exc.step} if hasattr(exc, "step") else {}
        return _fail("numeric", str(exc), EXIT_NUMERIC, **extra)
    except (ConfigError, ContractError, DomainError) as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except OSError as exc:
        return _fail("io", str(exc), EXIT_CONFIG)


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()

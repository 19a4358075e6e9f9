"""Command line front end wiring the pipeline together.

Subcommands map onto the library modules: gen, ingest-check, train,
calibrate, quantize, eval, replay.  A flat key=value config file can
seed any flag's default; explicit flags always win.  The IDS_SEED
environment variable is the fallback seed.  Exit codes: 0 success,
2 usage, and a distinct code per error class (see _EXIT_CODES).
"""

import argparse
import logging
import os
import sys
from pathlib import Path

from . import blocks, datasets, detector, errors, metrics, quant, replay as replay_mod
from .frames import SCHEMAS
from .nn import TrainConfig, build_cae, count_params, load_model, save_model, train, write_loss_log

logger = logging.getLogger(__name__)

_CONFIG_TYPES = {
    "data": str,
    "schema": str,
    "model": str,
    "qmodel": str,
    "threshold": int,
    "seed": int,
    "epochs": int,
    "batch": int,
    "lr": float,
    "rate": float,
    "out": str,
    "profile": str,
    "attack": str,
    "inject_rate": float,
    "window": str,
    "spoof_id": int,
    "duration": float,
    "pacing": str,
    "table_row": bool,
}

_EXIT_CODES = (
    (errors.ParseError, 3),
    ((errors.InvalidSpec, errors.InvalidProfile, errors.InvalidWindow,
      errors.RateNonPositive, errors.IdOutOfRange), 4),
    ((errors.InsufficientData, errors.EmptyDataset, errors.EmptyCalibrationSet,
      errors.NoSamples), 5),
    ((errors.ShapeMismatch, errors.MissingIntermediates, errors.LengthMismatch,
      errors.UnlabeledData), 6),
    (errors.NonFiniteLoss, 7),
    (errors.AccumulatorOverflow, 8),
    (errors.ModelFormatError, 9),
    (errors.ModelMissing, 10),
    (errors.BufferOverrun, 11),
    (OSError, 12),
    (errors.CanIdsError, 13),
)


def _exit_code(exc: Exception) -> int:
    for types, code in _EXIT_CODES:
        if isinstance(exc, types):
            return code
    return 13


def _read_config(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise errors.InvalidSpec(f"{path}:{line_no}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in _CONFIG_TYPES:
                raise errors.InvalidSpec(f"{path}:{line_no}: unknown key {key!r}")
            caster = _CONFIG_TYPES[key]
            try:
                values[key] = (value.strip().lower() in ("1", "true", "yes")
                               if caster is bool else caster(value.strip()))
            except ValueError:
                raise errors.InvalidSpec(
                    f"{path}:{line_no}: bad value {value.strip()!r} for {key}"
                ) from None
    return values


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("IDS_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise errors.InvalidSpec(f"IDS_SEED must be an integer, got {env!r}") from None
    return 0


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args, *, want_schema: str | None = None):
    if not args.data:
        raise errors.InvalidSpec("--data is required for this subcommand")
    schema = SCHEMAS[want_schema or args.schema]
    return datasets.load_dataset(args.data, schema)


def _load_any_model(args):
    if args.qmodel:
        return quant.load_qmodel(args.qmodel)
    if args.model:
        return load_model(args.model)
    raise errors.ModelMissing("provide --model or --qmodel")


def _benign_val_blocks(args):
    """Validation slice of a benign log, as a block tensor."""
    ds = _load(args, want_schema=args.schema or "benign")
    _, val, _ = datasets.split_contiguous(ds, datasets.SplitSpec())
    built = blocks.build_blocks(val.frames)
    if not built:
        raise errors.InsufficientData("validation split holds fewer than one block")
    return blocks.blocks_to_batch(built)


def _parse_window(text: str) -> tuple[float, float]:
    try:
        lo, _, hi = text.partition(":")
        return float(lo), float(hi)
    except ValueError:
        raise errors.InvalidWindow(f"expected t0:t1, got {text!r}") from None


def cmd_gen(args) -> int:
    seed = _resolve_seed(args)
    profile = datasets.make_profile(args.profile, seed=seed)
    if args.duration is not None:
        import dataclasses

        profile = dataclasses.replace(profile, duration_s=args.duration)
    out = _out_dir(args)
    benign = datasets.generate_benign(profile)
    benign_path = out / "benign.log"
    datasets.save_dataset(benign_path, benign)
    print(f"wrote {benign_path} ({len(benign.frames)} frames)")
    if args.attack != "none":
        kind = datasets.AttackKind[args.attack.upper()]
        window = _parse_window(args.window) if args.window else _default_window(profile)
        attacked = datasets.inject_attack(
            benign, kind, rate=args.inject_rate, window=window,
            seed=seed + 1, spoof_id=args.spoof_id,
        )
        attack_path = out / f"{args.attack}.log"
        datasets.save_dataset(attack_path, attacked)
        print(f"wrote {attack_path} ({len(attacked.frames)} frames, "
              f"window {window[0]:g}..{window[1]:g}s at {args.inject_rate:g}/s)")
    return 0


def _default_window(profile) -> tuple[float, float]:
    return (profile.duration_s * 0.25, profile.duration_s * 0.75)


def cmd_ingest_check(args) -> int:
    ds = _load(args)
    counts = ds.label_counts()
    t0, t1 = ds.time_range()
    n_blocks = len(ds.frames) // blocks.BLOCK_SIZE
    print(f"frames   : {len(ds.frames)}")
    print(f"labels   : " + "  ".join(f"{k.name.lower()} {v}" for k, v in counts.items()))
    print(f"time span: {t0:.3f}s .. {t1:.3f}s")
    print(f"blocks   : {n_blocks} (block size {blocks.BLOCK_SIZE})")
    return 0


def cmd_train(args) -> int:
    seed = _resolve_seed(args)
    ds = _load(args, want_schema=args.schema or "benign")
    train_ds, val_ds, _ = datasets.split_contiguous(ds, datasets.SplitSpec())
    x_train = blocks.blocks_to_batch(blocks.build_blocks(train_ds.frames))
    x_val = blocks.blocks_to_batch(blocks.build_blocks(val_ds.frames))
    config = TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch, seed=seed
    )
    model = build_cae(seed=seed)
    logger.info("model has %d parameters", count_params(model))
    best, history = train(model, x_train, x_val, config)
    out = _out_dir(args)
    model_path = out / "model.caem"
    save_model(best, model_path)
    write_loss_log(history, out / "loss_log.csv")
    final = history[-1]
    print(f"wrote {model_path}")
    print(f"epochs {len(history)}  final train loss {final.train_loss:.6f}  "
          f"val loss {'-' if final.val_loss is None else f'{final.val_loss:.6f}'}")
    return 0


def cmd_calibrate(args) -> int:
    model = _load_any_model(args)
    x_val = _benign_val_blocks(args)
    cal = detector.calibrate_threshold(model, x_val)
    out = _out_dir(args)
    detector.write_calibration_csv(cal, out / "calibration.csv")
    print(f"chosen threshold: {cal.chosen}")
    return 0


def cmd_quantize(args) -> int:
    if not args.model:
        raise errors.ModelMissing("quantize needs --model")
    model = load_model(args.model)
    x_val = _benign_val_blocks(args)
    stats = quant.calibrate(model, x_val)
    qmodel = quant.quantize(model, stats)
    out = _out_dir(args)
    qpath = out / "model.qcae"
    quant.save_qmodel(qmodel, qpath)
    print(f"wrote {qpath} (calibrated on {stats.block_count} blocks)")
    return 0


def cmd_eval(args) -> int:
    model = _load_any_model(args)
    ds = _load(args)
    threshold = args.threshold if args.threshold is not None else detector.DEFAULT_THRESHOLD
    report, verdicts = metrics.evaluate_dataset(model, ds, threshold)
    out = _out_dir(args)
    name = Path(args.data).stem
    detector.write_verdicts_csv(verdicts, out / "verdicts.csv",
                                blocks.build_blocks(ds.frames))
    metrics.write_reports_csv([(name, report)], out / "metrics.csv")
    metrics.write_reports_jsonl([(name, report)], out / "metrics.jsonl")
    if args.table_row:
        print(metrics.TABLE_ROW_HEADER)
        print(metrics.format_table_row(name, report))
    else:
        print(metrics.format_report(report, title=f"{name} @ threshold {threshold}"))
    return 0


def cmd_replay(args) -> int:
    model = _load_any_model(args)
    ds = _load(args)
    threshold = args.threshold if args.threshold is not None else detector.DEFAULT_THRESHOLD
    verdicts, stats = replay_mod.replay(
        ds, model, threshold, rate=args.rate, pacing=args.pacing
    )
    out = _out_dir(args)
    built = blocks.build_blocks(ds.frames)
    detector.write_verdicts_csv(verdicts, out / "verdicts.csv", blocks=built)
    print(replay_mod.report_stats(stats))
    return 0


def _build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="canids",
        description="CAN-bus intrusion detection with a convolutional autoencoder",
    )
    parser.add_argument("--config", help="flat key=value file providing flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers: dict = {}

    def common(sp, *, data=False, model=False, out=False):
        if data:
            sp.add_argument("--data", help="input log file")
            sp.add_argument("--schema", choices=sorted(SCHEMAS), default=None,
                            help="log schema (default depends on subcommand)")
        if model:
            sp.add_argument("--model", help="float model file (.caem)")
            sp.add_argument("--qmodel", help="quantized model file (.qcae)")
        if out:
            sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="RNG seed (falls back to IDS_SEED, then 0)")

    sp = subparsers["gen"] = sub.add_parser(
        "gen", help="generate a synthetic benign/attack corpus"
    )
    sp.add_argument("--profile", choices=("small", "desk"), default="small")
    sp.add_argument("--attack", choices=("none", "dos", "fuzzy", "spoof"), default="none")
    sp.add_argument("--inject-rate", type=float, default=1000.0,
                    help="attack frames per second")
    sp.add_argument("--window", help="injection window t0:t1 in seconds")
    sp.add_argument("--spoof-id", type=int, default=None,
                    help="CAN id to spoof (spoof attack only)")
    sp.add_argument("--duration", type=float, default=None,
                    help="override profile duration in seconds")
    common(sp, out=True)
    sp.set_defaults(func=cmd_gen)

    sp = subparsers["ingest-check"] = sub.add_parser(
        "ingest-check", help="parse a log and print dataset stats"
    )
    common(sp, data=True)
    sp.set_defaults(func=cmd_ingest_check)

    sp = subparsers["train"] = sub.add_parser(
        "train", help="train the autoencoder on benign traffic"
    )
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--batch", type=int, default=64)
    sp.add_argument("--lr", type=float, default=0.001)
    common(sp, data=True, out=True)
    sp.set_defaults(func=cmd_train)

    sp = subparsers["calibrate"] = sub.add_parser(
        "calibrate", help="pick the detection threshold on benign data"
    )
    common(sp, data=True, model=True, out=True)
    sp.set_defaults(func=cmd_calibrate)

    sp = subparsers["quantize"] = sub.add_parser(
        "quantize", help="post-training int8 quantization"
    )
    common(sp, data=True, model=True, out=True)
    sp.set_defaults(func=cmd_quantize)

    sp = subparsers["eval"] = sub.add_parser(
        "eval", help="classify a labeled log and report metrics"
    )
    sp.add_argument("--threshold", type=int, default=None,
                    help=f"detection threshold (default {detector.DEFAULT_THRESHOLD})")
    sp.add_argument("--table-row", action="store_true",
                    help="print a comparison-table-shaped row")
    common(sp, data=True, model=True, out=True)
    sp.set_defaults(func=cmd_eval)

    sp = subparsers["replay"] = sub.add_parser(
        "replay", help="stream a log through the detector"
    )
    sp.add_argument("--threshold", type=int, default=None)
    sp.add_argument("--rate", type=float, default=None,
                    help="frames per second (default: as fast as possible)")
    sp.add_argument("--pacing", choices=("virtual", "wall"), default="virtual")
    common(sp, data=True, model=True, out=True)
    sp.set_defaults(func=cmd_replay)

    return parser, subparsers


def _schema_fallbacks(args) -> None:
    if getattr(args, "schema", None) is None and hasattr(args, "schema"):
        args.schema = {
            cmd_ingest_check: "raw",
            cmd_train: "benign",
            cmd_calibrate: "benign",
            cmd_quantize: "benign",
            cmd_eval: "attack",
            cmd_replay: "attack",
        }.get(args.func, "raw")


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("IDS_LOG", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser, subparsers = _build_parser()
    try:
        ns, _ = parser.parse_known_args(argv)
        if ns.config:
            overrides = _read_config(ns.config)
            for sp in subparsers.values():
                known = {a.dest for a in sp._actions}
                sp.set_defaults(**{k: v for k, v in overrides.items() if k in known})
        args = parser.parse_args(argv)
        _schema_fallbacks(args)
        return args.func(args)
    except errors.CanIdsError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return _exit_code(exc)
    except OSError as exc:
        logger.error("%s", exc)
        return 12


if __name__ == "__main__":
    sys.exit(main())

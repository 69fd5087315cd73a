"""Command-line interface.

Exit codes::

    0  success (verify prints its decision; both outcomes exit 0)
    1  unexpected internal error
    2  usage error (bad arguments, wrong photo count)
    3  invalid parameter or configuration
    4  dataset or image ingestion error
    5  checkpoint error
    6  training produced non-finite values
    7  user already enrolled
    8  user not enrolled
    9  calibration error
    10 evaluation protocol error
    11 output directory not empty
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import SystemConfig
from .errors import (
    CalibrationError, CheckpointError, EnrollmentConflict, IdentityNotFound, IngestionError,
    ParameterError, ProtocolError, ShapeError, TrainingError,
)
from .evaluation import run_evaluation
from .features import run_stages
from .imaging import read_image, write_image, write_ridge_map
from .network import NetworkParams
from .pipeline import Pipeline
from .ridges import write_orientation_text, write_skeleton
from .siamese import AdamConfig
from .store import TemplateStore
from .synthetic import generate_dataset
from .workflow import train_model

log = logging.getLogger("cfrs")

EXIT_CODES = [
    (EnrollmentConflict, 7),
    (IdentityNotFound, 8),
    (CalibrationError, 9),
    (ProtocolError, 10),
    (TrainingError, 6),
    (CheckpointError, 5),
    (IngestionError, 4),
    (ShapeError, 3),
    (ParameterError, 3),
    (FileExistsError, 11),
]


class UsageError(Exception):
    pass


def _config(args) -> SystemConfig:
    cfg = SystemConfig.load(args.config) if args.config else SystemConfig()
    over = {k: getattr(args, k, None) for k in ("seed", "store_dir", "checkpoint")}
    if getattr(args, "ckpt", None):
        over["checkpoint"] = args.ckpt
    if getattr(args, "store", None):
        over["store_dir"] = args.store
    return cfg.override(**over)


def _require_calibrated(cfg: SystemConfig):
    cal = cfg.calibration()
    if cal is None:
        raise CalibrationError("configuration has no calibration bounds; run train first")
    return cal


# commands ------------------------------------------------------------------

def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else 0
    specs = generate_dataset(args.out, args.fingers, args.impressions, seed)
    print(f"wrote {len(specs) * args.impressions} images for {len(specs)} fingers to {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    st = run_stages(read_image(args.photo), cfg.extraction())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_image(out / "gray.png", st.gray)
    write_ridge_map(out / "ridges.pgm", st.ridges)
    write_skeleton(out / "skeleton.pgm", st.skeleton)
    write_orientation_text(out / "orientation.txt", st.field)
    st.minutiae.write(out / "minutiae.txt")
    print(f"{len(st.minutiae)} minutiae written to {out / 'minutiae.txt'}")
    return 0


def cmd_train(args) -> int:
    data = Path(args.data)
    if not data.is_dir():
        raise IngestionError(f"{data}: dataset directory not found")
    cfg = _config(args)
    cfg = cfg.override(margin=args.margin)
    adam = AdamConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=cfg.seed)
    if args.epochs == 0:
        log.warning("--epochs 0: writing the initial (untrained) parameters")
    run = train_model(data, cfg, adam, args.subset)
    for k, loss in enumerate(run.history, 1):
        print(f"epoch {k} loss {loss:.6f}")
    ckpt = Path(args.out)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    run.params.save(ckpt)
    cfg_path = Path(args.config_out) if args.config_out else ckpt.with_suffix(".json")
    run.config.override(checkpoint=str(ckpt.resolve())).save(cfg_path)
    print(f"checkpoint: {ckpt}\nconfig: {cfg_path}")
    return 0


def cmd_enroll(args) -> int:
    if len(args.photos) != 3:
        raise UsageError(f"enroll needs exactly 3 photos, got {len(args.photos)}")
    cfg = _config(args)
    pipe = Pipeline.from_config(cfg)
    store = TemplateStore(cfg.store_dir)
    t = store.enroll(args.id, [read_image(p) for p in args.photos], pipe)
    print(f"enrolled {t.user_id} ({len(t.minutiae)} minutiae) in {store.root}")
    return 0


def cmd_verify(args) -> int:
    cfg = _config(args)
    cal = _require_calibrated(cfg)
    threshold = args.threshold if args.threshold is not None else cfg.operating_threshold
    if threshold is None:
        raise ParameterError("no operating threshold: pass --threshold or evaluate first")
    pipe = Pipeline.from_config(cfg)
    store = TemplateStore(cfg.store_dir)
    r = store.verify(args.id, read_image(args.photo), pipe, cal, threshold,
                     cfg.weights(), cfg.tolerances())
    print(f"S_d {r.s_d!r}")
    print(f"S_m {r.s_m}")
    print(f"S_d_norm {r.s_d_norm!r}")
    print(f"S_m_norm {r.s_m_norm!r}")
    print(f"S_f {r.fused!r}")
    print(f"threshold {r.threshold!r}")
    print(f"decision {r.decision}")
    return 0


def cmd_list(args) -> int:
    for uid in TemplateStore(_config(args).store_dir).list():
        print(uid)
    return 0


def cmd_remove(args) -> int:
    existed = TemplateStore(_config(args).store_dir).remove(args.id)
    print(f"removed {args.id}" if existed else f"{args.id} was not enrolled")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    if not cfg.checkpoint:
        raise CheckpointError("pass --ckpt or a config naming a checkpoint")
    pipe = Pipeline(NetworkParams.load(cfg.checkpoint), cfg)
    report = run_evaluation(args.data, pipe, args.subset, cfg.calibration())
    report.write(args.report)
    print(report.summary(), end="")
    if args.config:
        SystemConfig.save(replace(SystemConfig.load(args.config),
                                  operating_threshold=report.eer["fusion"].threshold), args.config)
        print(f"operating threshold set to the fusion EER threshold in {args.config}")
    return 0


# parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="system config file (JSON); flags override it")
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    p = argparse.ArgumentParser(prog="cfrs", description="Contactless fingerprint recognition toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--fingers", type=int, required=True)
    s.add_argument("--impressions", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", parents=[common], help="dump every extraction stage of one photo")
    s.add_argument("--photo", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", parents=[common], help="train the embedding network")
    s.add_argument("--data", required=True)
    s.add_argument("--epochs", type=int, default=70)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--config-out", help="where to write the trained config (default: <out>.json)")
    s.add_argument("--subset", choices=("train", "all"), default="train")
    s.add_argument("--lr", type=float, default=1e-5)
    s.add_argument("--batch-size", type=int, default=16)
    s.add_argument("--margin", type=float, default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("enroll", parents=[common], help="enroll a user from three photos")
    s.add_argument("--id", required=True)
    s.add_argument("--photos", nargs="+", required=True)
    s.add_argument("--store")
    s.add_argument("--ckpt")
    s.set_defaults(func=cmd_enroll)

    s = sub.add_parser("verify", parents=[common], help="verify a photo against a claimed id")
    s.add_argument("--id", required=True)
    s.add_argument("--photo", required=True)
    s.add_argument("--threshold", type=float)
    s.add_argument("--store")
    s.add_argument("--ckpt")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("list", parents=[common], help="list enrolled ids")
    s.add_argument("--store")
    s.set_defaults(func=cmd_list)

    s = sub.add_parser("remove", parents=[common], help="remove an enrolled id")
    s.add_argument("--id", required=True)
    s.add_argument("--store")
    s.set_defaults(func=cmd_remove)

    s = sub.add_parser("evaluate", parents=[common], help="run the verification protocol")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt")
    s.add_argument("--report", required=True, help="output directory for CSVs and summary")
    s.add_argument("--subset", choices=("train", "test", "all"), default="test")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"cfrs {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        for kind, code in EXIT_CODES:
            if isinstance(exc, kind):
                print(f"cfrs {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())

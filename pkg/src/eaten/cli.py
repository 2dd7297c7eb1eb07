"""``eaten`` command line: generate -> train -> eval -> infer.

Exit codes: 0 success, 2 usage or configuration problem, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .domain import EntitySchema, SchemaError, VocabularyError
from .metrics import EvalReport, score_pairs
from .model import CheckpointError, EatenModel
from .numerics import DimensionError
from .synthgen import GenerationError, LayoutError, generate_dataset, load_dataset, read_pgm
from .training import TrainingDiverged, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("eaten")


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    if getattr(args, "ablate_state_transition", False):
        cfg.model.state_transition = False
    if getattr(args, "attention_norm", None):
        cfg.model.attention_norm = args.attention_norm
    return cfg


# ------------------------------------------------------------------ generate

def cmd_generate(args) -> int:
    cfg = _config(args)
    if args.seed is not None and cfg.scenario.spec.seed != args.seed:
        # glyph shapes follow the run seed too
        cfg.scenario.spec.seed = args.seed
    manifest, _ = generate_dataset(cfg.scenario.spec, cfg.scenario.transform, cfg.data.n_train, cfg.data.n_test,
                                   cfg.seed, args.out, cfg.schema, jobs=args.jobs)
    print(manifest["hash"])
    return EXIT_OK


# ------------------------------------------------------------------ train

def _check_manifest(manifest: dict, cfg: RunConfig) -> None:
    schema = manifest.get("schema")
    if schema is not None and EntitySchema.from_dict(schema) != cfg.schema:
        raise UsageError(f"dataset schema {schema} does not match the config schema {cfg.schema.to_dict()}")
    if manifest.get("alphabet") != cfg.vocab.alphabet:
        raise UsageError("dataset alphabet does not match the config scenario")


def cmd_train(args) -> int:
    cfg = _config(args)
    manifest, splits = load_dataset(args.data)
    _check_manifest(manifest, cfg)
    if args.epochs is not None:
        cfg.train = dataclasses.replace(cfg.train, epochs=args.epochs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    start, velocity = 0, None
    if args.resume:
        model = EatenModel.load(args.resume, cfg.schema, cfg.vocab, cfg.model)
        start = int(model.checkpoint_extra.get("epoch", -1)) + 1
        vel_path = Path(args.resume).with_suffix(".velocity.npz")
        if vel_path.exists():
            with np.load(vel_path) as z:
                velocity = {k: z[k] for k in z.files}
        log.info("resuming at epoch %d from %s", start, args.resume)
    else:
        model = EatenModel(cfg.schema, cfg.vocab, cfg.model, seed=cfg.seed)
    val = splits["test"] if not args.no_val else None
    history = train(model, splits["train"], cfg.train, val_set=val, out_dir=out, start_epoch=start,
                    velocity=velocity, on_epoch=lambda r: print(json.dumps(r), flush=True))
    if history:
        print(f"final loss {history[-1]['loss']:.6f}")
    return EXIT_OK


# ------------------------------------------------------------------ eval / infer

def _infer_chunk(payload):
    ckpt, images = payload
    return EatenModel.load(ckpt).infer_batched(images)


def predict_parallel(ckpt: str, model: EatenModel, images: list[np.ndarray], jobs: int) -> list[dict[str, str]]:
    """Greedy decoding, optionally spread over processes; results keep input order."""
    if jobs <= 1 or len(images) < 2 * jobs:
        return model.infer_batched(images)
    bounds = np.linspace(0, len(images), jobs + 1).astype(int)
    chunks = [(ckpt, images[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(jobs) as pool:
        parts = list(pool.map(_infer_chunk, chunks))
    return [p for part in parts for p in part]


def cmd_eval(args) -> int:
    model = EatenModel.load(args.checkpoint)
    if args.config:
        cfg = load_config(args.config)
        if cfg.schema != model.schema:
            raise UsageError("checkpoint schema does not match the config schema")
    manifest, splits = load_dataset(args.data)
    samples = splits[args.split]
    names = model.schema.entity_names
    preds = predict_parallel(args.checkpoint, model, [s.image for s in samples], args.jobs)
    golds = [{n: s.targets.get(n, "") for n in names} for s in samples]
    report: EvalReport = score_pairs(preds, golds, names)
    print(report.table())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    return EXIT_OK


def _read_image(path: str) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npy":
        return np.load(p).astype(np.float64)
    return read_pgm(p)


def cmd_infer(args) -> int:
    model = EatenModel.load(args.checkpoint)
    for path in args.images:
        result = model.infer(_read_image(path))
        if len(args.images) > 1:
            print(f"# {path}")
        for name in model.schema.entity_names:
            print(f"{name}\t{result[name]}")
        if args.out:
            Path(args.out).write_text(json.dumps(result, sort_keys=True) + "\n")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eaten", description="Entity-aware attention text extraction")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="YAML run config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")

    g = sub.add_parser("generate", help="render a synthetic dataset")
    common(g)
    g.add_argument("--out", required=True, help="dataset directory")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a generated dataset")
    common(t)
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="run directory for checkpoints and log")
    t.add_argument("--resume", help="checkpoint to continue from (its epoch + 1 is the next epoch)")
    t.add_argument("--epochs", type=int, help="override train.epochs")
    t.add_argument("--no-val", action="store_true", help="skip validation on the test split")
    t.add_argument("--ablate-state-transition", action="store_true",
                   help="start every decoder after the first from the zero state")
    t.add_argument("--attention-norm", choices=("softmax", "ratio"))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    common(e, config_required=False)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--out", help="write the report as JSON")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="read entities from images (.pgm or .npy)")
    common(i, config_required=False)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("images", nargs="+")
    i.add_argument("--out", help="write the (last) entity map as JSON")
    i.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, UsageError, CheckpointError, SchemaError, LayoutError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, GenerationError, DimensionError, VocabularyError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

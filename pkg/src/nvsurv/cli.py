"""Command-line entry point: ``nvsurv {synth,run,cost}``.

Exit codes: 0 success, 1 validation failure (bad arguments, config or input
files), 2 runtime failure inside a pipeline stage.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .cnn.network import ARCHITECTURES, MODEL_FORMAT, build_architecture, predict_batched, save_model
from .cnn.train import history_csv, train
from .config import ConfigError, PipelineConfig, load_config
from .cost import cost_csv, cost_table
from .dataset import DATASET_FORMAT, build_dataset, save_dataset, stack
from .events import (
    BINARY_MAGIC,
    EventFormatError,
    EventValidationError,
    annotations_from_json,
    annotations_to_json,
    parse_events,
    write_events,
)
from .frames import Representation
from .metrics import evaluate
from .proposals import ProposalSource
from .synth import plan_scene, synthesize_scene

log = logging.getLogger("nvsurv")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
SCENE_MANIFEST = "scenes.json"
TRACK_ID_STRIDE = 10_000


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


@contextlib.contextmanager
def stage(name: str):
    t0 = time.perf_counter()
    try:
        yield
    except (ConfigError, EventFormatError, EventValidationError):
        raise
    except Exception as e:
        raise StageError(name, e) from e
    log.info("%s done in %.1f s", name, time.perf_counter() - t0)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def version_text() -> str:
    return (f"nvsurv {__version__} (events {BINARY_MAGIC.decode()}, model {MODEL_FORMAT}, "
            f"dataset {DATASET_FORMAT})")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML file with one table per stage")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="TABLE.KEY=VALUE", help="override one config value (repeatable)")
    common.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread cap")
    common.add_argument("--strict-deterministic", action="store_true",
                        help="single-threaded numerics for bit-identical reruns")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="nvsurv", description="Neuromorphic traffic-surveillance pipeline.")
    p.add_argument("--version", action="version", version=version_text())
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic scenes")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--seed", type=int, default=None, help="overrides synth.seed")

    r = sub.add_parser("run", parents=[common], help="frames -> proposals -> dataset -> train -> eval")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", type=Path, help=f"directory written by 'synth' ({SCENE_MANIFEST})")
    src.add_argument("--train", nargs=2, action="append", metavar=("EVENTS", "ANNOTATIONS"),
                     help="training scene (repeatable); needs --test")
    r.add_argument("--test", nargs=2, action="append", metavar=("EVENTS", "ANNOTATIONS"))
    r.add_argument("--rp", choices=[s.value for s in ProposalSource])
    r.add_argument("--repr", choices=[x.value for x in Representation])
    r.add_argument("--arch", choices=list(ARCHITECTURES))
    r.add_argument("--epochs", type=int)
    r.add_argument("--seed", type=int, help="overrides train.seed and dataset.seed")
    r.add_argument("--out", type=Path, required=True)
    r.add_argument("--save-dataset", action="store_true", help="also write the patch dataset")

    c = sub.add_parser("cost", parents=[common], help="FLOPs and memory table as CSV")
    c.add_argument("--tile", type=int, default=21)
    c.add_argument("--arch", default="all", choices=["all", *ARCHITECTURES])
    c.add_argument("--channels", type=int, default=2)
    c.add_argument("--out", type=Path, help="write CSV here instead of stdout")
    return p


def _config(args) -> PipelineConfig:
    overrides = list(args.overrides)
    if args.command == "synth" and args.seed is not None:
        overrides.append(f"synth.seed={args.seed}")
    if args.command == "run":
        for key in ("rp", "repr", "arch"):
            if getattr(args, key) is not None:
                overrides.append(f'run.{key}="{getattr(args, key)}"')
        if args.epochs is not None:
            overrides.append(f"train.epochs={args.epochs}")
        if args.seed is not None:
            overrides += [f"train.seed={args.seed}", f"dataset.seed={args.seed}"]
    return load_config(args.config, overrides)


def cmd_synth(args, cfg: PipelineConfig) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    plan = cfg.synth.plan()
    n = cfg.synth.train_scenes + cfg.synth.test_scenes
    scenes = []
    with stage("synth"):
        for i in range(n):
            stream, tracks = synthesize_scene(
                plan_scene(plan, cfg.synth.scene_seed(i), track_id_start=i * TRACK_ID_STRIDE))
            name = f"scene_{i:03d}"
            with (out / f"{name}.evs").open("wb") as fh:
                write_events(stream, "binary", fh)
            (out / f"{name}.json").write_text(annotations_to_json(tracks))
            split = "train" if i < cfg.synth.train_scenes else "test"
            scenes.append({"events": f"{name}.evs", "annotations": f"{name}.json", "split": split,
                           "seed": cfg.synth.scene_seed(i), "events_count": len(stream),
                           "tracks": len(tracks)})
    manifest = {"format": "nvsurv-scenes/1", "config": cfg.to_dict()["synth"], "scenes": scenes}
    (out / SCENE_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {n} scenes to {out}")
    return EXIT_OK


def _read_pair(events_path, annotations_path):
    events_path, annotations_path = Path(events_path), Path(annotations_path)
    for path in (events_path, annotations_path):
        if not path.is_file():
            raise ConfigError(f"input file not found: {path}")
    fmt = "csv" if events_path.suffix.lower() == ".csv" else "binary"
    stream = parse_events(events_path.read_bytes(), fmt)
    try:
        tracks = annotations_from_json(annotations_path.read_text())
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"{annotations_path}: {e}") from e
    return stream, tracks


def _scene_lists(args):
    if args.data is not None:
        path = args.data / SCENE_MANIFEST
        if not path.is_file():
            raise ConfigError(f"{args.data} has no {SCENE_MANIFEST}; run 'nvsurv synth' first")
        scenes = json.loads(path.read_text())["scenes"]
        pairs = {"train": [], "test": []}
        for s in scenes:
            pairs[s["split"]].append((args.data / s["events"], args.data / s["annotations"]))
        return pairs["train"], pairs["test"]
    if not args.test:
        raise ConfigError("--train needs at least one --test pair")
    return args.train, args.test


def cmd_run(args, cfg: PipelineConfig) -> int:
    train_pairs, test_pairs = _scene_lists(args)
    train_scenes = [_read_pair(*p) for p in train_pairs]
    test_scenes = [_read_pair(*p) for p in test_pairs]
    rc = cfg.run
    rep = Representation(rc.repr)
    with stage("dataset"):
        split = build_dataset(train_scenes, test_scenes, rc.rp, rep, rc.balance,
                              cfg.frames, cfg.proposals, cfg.dataset)
    log.info("samples: train %d, val %d, test %d", len(split.train), len(split.val), len(split.test))
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.save_dataset:
        with stage("save-dataset"):
            save_dataset(split, out / "dataset", rep, {"rp": rc.rp, "config": cfg.to_dict()})
    with stage("train"):
        net = build_architecture(rc.arch, rep.channels).init_weights(cfg.train.seed)
        net, history = train(net, split, cfg.train)
    with stage("eval"):
        x, y, tid = stack(split.test)
        pred = predict_batched(net, x, cfg.train.divisor).argmax(axis=1)
        metrics = evaluate(y, pred, tid)
    save_model(net, out / "model", cfg.train.divisor)
    (out / "history.csv").write_text(history_csv(history))
    (out / "metrics.json").write_text(metrics.to_json())
    print(metrics.table_cell())
    return EXIT_OK


def cmd_cost(args, cfg: PipelineConfig) -> int:
    labels = tuple(ARCHITECTURES) if args.arch == "all" else (args.arch,)
    if args.tile < 1:
        raise ConfigError("--tile must be >= 1")
    with stage("cost"):
        text = cost_csv(cost_table(labels, args.channels, args.tile))
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "cost": cmd_cost}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = 1 if args.strict_deterministic else args.threads
    if threads is not None and threads < 1:
        print("nvsurv: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        cfg = _config(args)
        limits = threadpool_limits(threads) if threads else contextlib.nullcontext()
        with limits:
            return COMMANDS[args.command](args, cfg)
    except (ConfigError, EventFormatError, EventValidationError) as e:
        print(f"nvsurv: error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as e:
        print(f"nvsurv: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``lssfnet <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import Checkpoint, CheckpointError, file_digest, load_checkpoint, save_checkpoint
from .data import DatasetManifest, load_dataset, load_image, save_mask, synth_lesions
from .losses import LossConfig
from .network import NetworkConfig, forward, init_params, predict_mask, report_json
from .train import TrainConfig, evaluate, evaluate_params, train

log = logging.getLogger("lssfnet")

RUN_SECTIONS = {"network", "loss", "train", "data", "val_data", "out", "init_from"}


class ConfigError(ValueError):
    """Bad configuration; mapped to exit code 2."""


@dataclasses.dataclass
class RunConfig:
    network: NetworkConfig
    loss: LossConfig
    train: TrainConfig
    data: str | None = None
    val_data: str | None = None
    out: str | None = None
    init_from: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = sorted(set(d) - RUN_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        try:
            network = NetworkConfig.from_dict(d.get("network", {}))
            loss = _strict(LossConfig, d.get("loss", {}), "loss")
            train_cfg = TrainConfig.from_dict(d.get("train", {}))
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(network, loss, train_cfg, d.get("data"), d.get("val_data"), d.get("out"), d.get("init_from"))


def _strict(cls, d: dict, section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise KeyError(f"unknown {section} config key(s): {', '.join(unknown)}")
    return cls(**d)


def load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig.from_dict({})
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return RunConfig.from_dict(doc)


def resolve_seed(flag: int | None, fallback: int) -> int:
    """``--seed`` wins, then ``LSSF_SEED``, then the config value."""
    if flag is not None:
        return flag
    env = os.environ.get("LSSF_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"LSSF_SEED must be an integer, got {env!r}") from exc
    return fallback


def open_dataset(path: str, image_size: int) -> DatasetManifest:
    """A JSON-lines manifest, or a directory holding one or images/ + masks/."""
    p = Path(path)
    if p.is_dir():
        if (p / "manifest.jsonl").exists():
            return DatasetManifest.read(p / "manifest.jsonl", image_size)
        return DatasetManifest.from_directory(p, image_size)
    if not p.exists():
        raise FileNotFoundError(f"dataset {path} not found")
    return DatasetManifest.read(p, image_size)


# -- commands ------------------------------------------------------------------------

def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    data = args.data or rc.data
    out = Path(args.out or rc.out or "run")
    if data is None:
        raise ConfigError("no dataset given (--data or config 'data')")
    overrides = {k: v for k, v in (("epochs", args.epochs), ("max_steps", args.max_steps),
                                   ("batch_size", args.batch_size), ("lr", args.lr)) if v is not None}
    tc = dataclasses.replace(rc.train, seed=resolve_seed(args.seed, rc.train.seed), **overrides)
    net = rc.network
    init_path = args.init_from or rc.init_from
    init = None
    if init_path:
        init = load_checkpoint(init_path, net)
        log.info("warm start from %s sha256=%s", init_path, file_digest(init_path))
    manifest = open_dataset(data, net.input_size)
    val_path = args.val_data or rc.val_data
    val = load_dataset(open_dataset(val_path, net.input_size)) if val_path else None
    log.info("training seed=%d on %d images (%s)", tc.seed, len(manifest), data)
    result = train(net, manifest, rc.loss, init, tc, val, resume=not args.transfer)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.best, out / "best.ckpt")
    save_checkpoint(result.last, out / "last.ckpt")
    result.write_history(out / "history.csv")
    report = evaluate(result.best, val if val is not None else manifest, rc.loss, tc.threshold)
    (out / "metrics.json").write_text(report.to_json() + "\n")
    print(json.dumps({"schema": "lssfnet.train/1", "out": str(out), "epochs": len(result.history),
                      "stopped_early": result.stopped_early, "jaccard": report.jaccard, "seed": tc.seed}))
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    manifest = open_dataset(args.data, ckpt.config.input_size)
    report = evaluate(ckpt, manifest, threshold=args.threshold, mode=args.aggregation)
    print(report.to_json(include_per_image=args.per_image))
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    size = ckpt.config.input_size
    with Image.open(args.image) as img:
        original = img.size
    x = load_image(args.image, size)[None]
    params = ckpt.to_params()
    mask = predict_mask(forward(x, params, ckpt.config, "infer"), args.threshold)[0]
    if original != (size, size):
        mask = np.asarray(Image.fromarray(mask * 255).resize(original, Image.NEAREST)) >= 128
    save_mask(mask, args.out_mask)
    log.info("wrote %s (%dx%d)", args.out_mask, *original)
    return 0


def cmd_report(args) -> int:
    net = load_run_config(args.config).network
    if args.input_size is not None:
        net = dataclasses.replace(net, input_size=args.input_size)
    print(report_json(net, init_params(net)))
    return 0


def cmd_selftest(args) -> int:
    from . import selftest

    return 0 if selftest.run() else 1


def cmd_synth(args) -> int:
    seed = resolve_seed(args.seed, 0)
    manifest = synth_lesions(args.n, args.size, seed, args.out)
    print(json.dumps({"schema": "lssfnet.synth/1", "out": str(args.out), "n": len(manifest),
                      "size": args.size, "seed": seed}))
    return 0


def cmd_init(args) -> int:
    """Write an untrained checkpoint (useful for predict/eval plumbing)."""
    rc = load_run_config(args.config)
    seed = resolve_seed(args.seed, rc.network.seed)
    params = init_params(rc.network, seed=seed)
    save_checkpoint(Checkpoint.from_params(params, rc.network, seed=seed), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lssfnet", description="Lightweight lesion segmentation network tools.")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a JSON run config")
    p.add_argument("--config")
    p.add_argument("--data", help="manifest.jsonl or dataset directory")
    p.add_argument("--val-data")
    p.add_argument("--out", help="output directory")
    p.add_argument("--init-from", help="checkpoint to warm start from")
    p.add_argument("--transfer", action="store_true", help="take only the weights from --init-from")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="metrics JSON for a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--aggregation", choices=["per-image", "micro"], default="per-image")
    p.add_argument("--per-image", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="write a {0,255} PNG mask for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-mask", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("report", help="layer table with parameters and FLOPs")
    p.add_argument("--config")
    p.add_argument("--input-size", type=int)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("selftest", help="run the built-in property suites")
    p.set_defaults(fn=cmd_selftest)

    p = sub.add_parser("synth", help="generate a synthetic lesion dataset")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("init", help="write a freshly initialised checkpoint")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_init)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

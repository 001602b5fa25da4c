"""Command-line interface.

Every subcommand prints a JSON document on success. Failures exit non-zero
and print ``{"error": {"type": ..., "message": ...}}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import shlex
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from ._validation import InvalidArgument, URGRError
from .data import (
    SynthConfig,
    build_degradation_set,
    load_manifest,
    read_pairs,
    synth_generate,
    write_pairs,
)
from .evaluation import (
    Pipeline,
    bench_throughput,
    data_sweep,
    eval_classifier,
    eval_sr,
    evaluate_manifest,
    jsonable,
    prepare_manifest,
    urgr_infer,
)
from .focus import ExternalDetector, FocusConfig, OracleDetector
from .gvit import GViTConfig, GViTTrainConfig, predict_logits, train_gvit
from .hqnet import HQNetConfig, HQNetTrainConfig, hqnet_forward, train_hqnet
from .imaging import DegradationConfig, read_image


def _seed(args) -> int:
    env = os.environ.get("URGR_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise InvalidArgument(f"URGR_SEED must be an integer, got {env!r}") from None
    return args.seed


def _read_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise InvalidArgument(f"config {path} must be a JSON object")
    return cfg


def _emit(payload: dict, path=None) -> None:
    text = json.dumps(jsonable(payload), sort_keys=True, indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    sys.stdout.write(text)


def _load_pipeline(args) -> Pipeline:
    gvit, focus = checkpoint.load_gvit(args.gvit)
    hq = checkpoint.load_hqnet(args.hqnet) if getattr(args, "hqnet", None) else None
    if focus is None:
        focus = FocusConfig(target_size=hq.cfg.input_size if hq else gvit.cfg.graph_grid)
    return Pipeline(gvit, hq, focus)


def cmd_synth(args):
    cfg = SynthConfig(count=args.count, seed=_seed(args), d_min=args.d_min, d_max=args.d_max)
    manifest = synth_generate(cfg, args.out)
    _emit({
        "manifest": str(Path(args.out) / "manifest.jsonl"),
        "count": len(manifest),
        "config": cfg.to_dict(),
        "class_histogram": manifest.class_histogram(),
        "distance_histogram": manifest.distance_histogram(),
        "balance": manifest.balance(),
    })


def cmd_degrade_set(args):
    manifest = load_manifest(args.manifest)
    focus = FocusConfig(a=args.a, target_size=args.target_size)
    deg = DegradationConfig(jpeg_quality=args.quality)
    pairs = build_degradation_set(manifest, focus, deg)
    write_pairs(pairs, args.out)
    with open(Path(args.out) / "pairs_config.json", "w") as fh:
        json.dump({"focus": focus.to_dict(), "degradation": deg.to_dict()}, fh, sort_keys=True, indent=2)
    _emit({"pairs": len(pairs), "out": args.out, "focus": focus.to_dict(), "degradation": deg.to_dict()})


def cmd_train_hqnet(args):
    conf = _read_config(args.config)
    pairs = read_pairs(args.pairs)
    model_cfg = conf.get("model", {})
    model_cfg.setdefault("input_size", pairs[0].clean.shape[0])
    cfg = HQNetConfig.from_dict(model_cfg)
    hyper = HQNetTrainConfig.from_dict({**conf.get("train", {}), "seed": _seed(args)})
    log = (lambda m: print(m, file=sys.stderr)) if args.verbose else None
    result = train_hqnet([(p.degraded, p.clean) for p in pairs], cfg, hyper, log=log)
    checkpoint.save_hqnet(result.model, args.out)
    _emit({"checkpoint": args.out, "pairs": len(pairs), "config": cfg.to_dict(),
           "train": hyper.to_dict(), "history": result.history}, args.report)


def cmd_train_gvit(args):
    conf = _read_config(args.config)
    manifest = load_manifest(args.manifest)
    hq = checkpoint.load_hqnet(args.hqnet) if args.hqnet else None
    focus_defaults = {"target_size": hq.cfg.input_size if hq else 64}
    focus = FocusConfig.from_dict({**focus_defaults, **conf.get("focus", {})})
    cfg = GViTConfig.from_dict(conf.get("model", {}))
    hyper = GViTTrainConfig.from_dict({**conf.get("train", {}), "seed": _seed(args)})
    images, kept = prepare_manifest(manifest, focus, hq)
    if not kept:
        raise InvalidArgument("no sample in the manifest has a detectable user")
    labels = manifest.labels[kept]
    log = (lambda m: print(m, file=sys.stderr)) if args.verbose else None
    result = train_gvit(images, labels, cfg, hyper, log=log)
    checkpoint.save_gvit(result.model, args.out, focus)
    _emit({"checkpoint": args.out, "samples": len(kept), "skipped": len(manifest) - len(kept),
           "config": cfg.to_dict(), "focus": focus.to_dict(), "train": hyper.to_dict(),
           "enhanced": hq is not None, "history": result.history}, args.report)


def cmd_eval(args):
    manifest = load_manifest(args.manifest)
    report = evaluate_manifest(manifest, _load_pipeline(args))
    _emit(report.to_dict(), args.report)


def cmd_eval_sr(args):
    pairs = read_pairs(args.pairs)
    hq = checkpoint.load_hqnet(args.hqnet)
    degraded = np.stack([p.degraded for p in pairs])
    improved = hqnet_forward(degraded, hq)
    outputs = iter(improved)
    report = eval_sr([(p.degraded, p.clean) for p in pairs], lambda _: next(outputs))
    _emit(report.to_dict(), args.report)


def cmd_infer(args):
    frame = read_image(args.image)
    pipeline = _load_pipeline(args)
    if args.detector == "external":
        if not args.detector_cmd:
            raise InvalidArgument("--detector external needs --detector-cmd")
        detector = ExternalDetector(shlex.split(args.detector_cmd))
    else:
        bbox = None
        if args.bbox:
            bbox = [float(v) for v in args.bbox.split(",")]
        elif args.manifest:
            manifest = load_manifest(args.manifest)
            target = Path(args.image).resolve()
            for s in manifest.samples:
                if (manifest.root / s.path).resolve() == target:
                    bbox = s.bbox
                    break
        detector = OracleDetector(bbox)
    result = urgr_infer(frame, detector, pipeline)
    _emit(result.to_json(), args.out)


def cmd_sweep(args):
    conf = _read_config(args.config)
    manifest = load_manifest(args.manifest)
    seed = _seed(args)
    focus = FocusConfig.from_dict({"target_size": 64, **conf.get("focus", {})})
    cfg = GViTConfig.from_dict(conf.get("model", {}))
    train_conf = conf.get("train", {})
    images, kept = prepare_manifest(manifest, focus)
    labels = manifest.labels[kept]
    distances = [manifest.samples[i].distance for i in kept]
    order = np.random.default_rng(seed).permutation(len(kept))
    n_test = max(1, int(round(args.test_fraction * len(kept))))
    test, train = np.sort(order[:n_test]), np.sort(order[n_test:])

    def train_fn(indices, s):
        hyper = GViTTrainConfig.from_dict({**train_conf, "seed": s})
        return train_gvit(images[train[indices]], labels[train[indices]], cfg, hyper).model

    def eval_fn(model):
        preds = (predict_logits(images[test], model).argmax(axis=1) + 1).tolist()
        return eval_classifier(labels[test], [distances[i] for i in test], preds).accuracy

    fractions = [float(f) for f in args.fractions.split(",")]
    rows = data_sweep(len(train), fractions, train_fn, eval_fn, k=args.k, seed=seed)
    _emit({"fractions": rows, "n_train_pool": len(train), "n_test": len(test),
           "metric": "accuracy"}, args.report)


def cmd_bench(args):
    manifest = load_manifest(args.manifest)
    pipeline = _load_pipeline(args)
    n = min(len(manifest), args.max_frames)
    frames = [(manifest.load_image(i), OracleDetector(manifest.samples[i].bbox)) for i in range(n)]
    _emit(bench_throughput(frames, pipeline, args.repetitions), args.report)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="urgr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic gesture corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=600)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--d-min", type=float, default=0.0)
    s.add_argument("--d-max", type=float, default=25.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("degrade-set", help="build degradation pairs from a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--quality", type=int, default=30)
    s.add_argument("--target-size", type=int, default=512)
    s.add_argument("--a", type=float, default=10.0)
    s.set_defaults(func=cmd_degrade_set)

    s = sub.add_parser("train-hqnet", help="train HQ-Net on a pairs directory")
    s.add_argument("--pairs", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_train_hqnet)

    s = sub.add_parser("train-gvit", help="train GViT on a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--hqnet")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_train_gvit)

    s = sub.add_parser("eval", help="evaluate the full pipeline on a labeled manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--hqnet")
    s.add_argument("--gvit", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("eval-sr", help="MSE/PSNR of HQ-Net against the identity baseline")
    s.add_argument("--pairs", required=True)
    s.add_argument("--hqnet", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_eval_sr)

    s = sub.add_parser("infer", help="classify one frame")
    s.add_argument("--image", required=True)
    s.add_argument("--hqnet")
    s.add_argument("--gvit", required=True)
    s.add_argument("--detector", choices=("oracle", "external"), default="oracle")
    s.add_argument("--detector-cmd", help="external detector command line")
    s.add_argument("--bbox", help="oracle box as x0,y0,w,h")
    s.add_argument("--manifest", help="look the oracle box up in this manifest")
    s.add_argument("--out")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("sweep", help="accuracy against training-set fraction")
    s.add_argument("--manifest", required=True)
    s.add_argument("--fractions", default="0.1,0.25,0.5,1.0")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--config")
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("bench", help="pipeline throughput")
    s.add_argument("--manifest", required=True)
    s.add_argument("--hqnet")
    s.add_argument("--gvit", required=True)
    s.add_argument("--repetitions", type=int, default=3)
    s.add_argument("--max-frames", type=int, default=50)
    s.add_argument("--report")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (URGRError, OSError, ValueError, KeyError) as exc:
        err = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        sys.stderr.write(json.dumps(err) + "\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Inference pipeline, evaluation reports, data-size sweeps and throughput benchmarks."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._validation import InvalidArgument, NotFound, check_image
from .data import CLASS_NAMES, NUM_CLASSES, DatasetManifest, class_name, distance_bin
from .focus import FocusConfig, focus_pipeline
from .gvit import ClassDistribution, classify, gvit_forward, predict_logits
from .hqnet import hqnet_forward
from .imaging import PSNR_INFINITE, bicubic_resize, mse, psnr

#: Throughput reported for the original robot deployment; context only.
REFERENCE_HZ = 11.43


def jsonable(value):
    """Replace infinite floats with the string ``"inf"`` so reports stay strict JSON."""
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, dict):
        return {k: jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return jsonable(value.item())
    return value


@dataclass
class InferenceResult:
    label: int | None
    certainty: float | None = None
    probs: np.ndarray | None = None

    @property
    def no_user(self) -> bool:
        return self.label is None

    def to_json(self) -> dict:
        if self.no_user:
            return {"no_user": True}
        return {"class": self.label, "name": class_name(self.label), "certainty": float(self.certainty)}


@dataclass
class Pipeline:
    """Trained models plus the focus settings used to prepare their inputs."""

    gvit: object
    hqnet: object | None = None
    focus: FocusConfig = field(default_factory=FocusConfig)

    def prepare(self, frame, detector) -> np.ndarray:
        """Focus on the user and, when an HQ-Net is present, improve the crop."""
        crop = focus_pipeline(frame, detector, self.focus)
        return self.enhance(crop[None])[0]

    def enhance(self, crops: np.ndarray) -> np.ndarray:
        if self.hqnet is None:
            return crops
        size = self.hqnet.cfg.input_size
        if crops.shape[1] != size:
            crops = np.stack([bicubic_resize(c, size, size) for c in crops])
        return hqnet_forward(crops, self.hqnet)


def urgr_infer(frame, detector, pipeline: Pipeline) -> InferenceResult:
    """Detect, focus, improve and classify one frame."""
    frame = check_image(frame, channels=3)
    try:
        x = pipeline.prepare(frame, detector)
    except NotFound:
        return InferenceResult(None)
    dist = gvit_forward(x, pipeline.gvit)
    label = classify(dist)
    return InferenceResult(label, float(dist.probs[label - 1]), dist.probs)


def prepare_manifest(manifest: DatasetManifest, focus_cfg: FocusConfig, hqnet=None,
                     detector_for=None):
    """Focused (and optionally improved) inputs for every sample with a detectable user.

    Returns ``(images, kept_indices)``.
    """
    crops, kept = [], []
    for i, s in enumerate(manifest.samples):
        det = detector_for(i) if detector_for else s.detector()
        try:
            crops.append(focus_pipeline(manifest.load_image(i), det, focus_cfg))
        except NotFound:
            continue
        kept.append(i)
    if not crops:
        return np.zeros((0, focus_cfg.target_size, focus_cfg.target_size, 3)), []
    images = np.stack(crops)
    if hqnet is not None:
        images = Pipeline(None, hqnet, focus_cfg).enhance(images)
    return images, kept


def pipeline_predictions(manifest: DatasetManifest, pipeline: Pipeline, detector_for=None):
    """Batched equivalent of calling :func:`urgr_infer` on every sample.

    Returns a list with a class index, or ``None`` for frames without a user.
    """
    images, kept = prepare_manifest(manifest, pipeline.focus, pipeline.hqnet, detector_for)
    preds = [None] * len(manifest)
    if kept:
        logits = predict_logits(images, pipeline.gvit)
        for i, z in zip(kept, logits):
            preds[i] = classify(ClassDistribution.from_logits(z))
    return preds


@dataclass
class EvalReport:
    n: int
    accuracy: float
    no_user: int
    confusion: list
    per_bin: list
    precision: list
    recall: list
    no_user_by_class: list

    def to_dict(self) -> dict:
        return jsonable({
            "n": self.n,
            "accuracy": self.accuracy,
            "no_user": self.no_user,
            "no_user_by_class": self.no_user_by_class,
            "classes": list(CLASS_NAMES),
            "confusion": self.confusion,
            "per_bin": self.per_bin,
            "precision": self.precision,
            "recall": self.recall,
        })


def eval_classifier(labels, distances, predictions) -> EvalReport:
    """Aggregate predictions against ground truth.

    ``predictions`` holds class indices, or ``None`` when no user was found;
    those count as errors and are tallied in ``no_user`` rather than in the
    confusion matrix.
    """
    labels = [int(v) for v in labels]
    if not (len(labels) == len(distances) == len(predictions)):
        raise InvalidArgument("labels, distances and predictions differ in length")
    conf = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=int)
    no_user = np.zeros(NUM_CLASSES, dtype=int)
    bins_total = np.zeros(26, dtype=int)
    bins_ok = np.zeros(26, dtype=int)
    for y, d, p in zip(labels, distances, predictions):
        b = distance_bin(d)
        bins_total[b] += 1
        if p is None:
            no_user[y - 1] += 1
            continue
        conf[y - 1, p - 1] += 1
        bins_ok[b] += int(p == y)
    n = len(labels)
    correct = int(np.trace(conf))
    per_bin = [{"bin": b, "lo_m": float(b), "count": int(bins_total[b]),
                "accuracy": (bins_ok[b] / bins_total[b]) if bins_total[b] else None}
               for b in range(26)]
    col = conf.sum(axis=0)
    row = conf.sum(axis=1) + no_user
    precision = [float(conf[i, i] / col[i]) if col[i] else None for i in range(NUM_CLASSES)]
    recall = [float(conf[i, i] / row[i]) if row[i] else None for i in range(NUM_CLASSES)]
    return EvalReport(
        n=n,
        accuracy=correct / n if n else 0.0,
        no_user=int(no_user.sum()),
        confusion=conf.tolist(),
        per_bin=per_bin,
        precision=precision,
        recall=recall,
        no_user_by_class=no_user.tolist(),
    )


def evaluate_manifest(manifest: DatasetManifest, pipeline: Pipeline, detector_for=None) -> EvalReport:
    preds = pipeline_predictions(manifest, pipeline, detector_for)
    return eval_classifier(manifest.labels, [s.distance for s in manifest.samples], preds)


@dataclass
class SRReport:
    n: int
    mse: float
    psnr: float
    baseline_mse: float
    baseline_psnr: float

    @property
    def psnr_gain(self) -> float:
        return self.psnr - self.baseline_psnr

    def to_dict(self) -> dict:
        return jsonable({
            "n": self.n,
            "model": {"mse": self.mse, "psnr": self.psnr},
            "baseline": {"mse": self.baseline_mse, "psnr": self.baseline_psnr},
            "psnr_gain": self.psnr_gain if math.isfinite(self.psnr_gain) else None,
        })


def eval_sr(pairs, sr_fn: Callable) -> SRReport:
    """Mean MSE/PSNR of ``sr_fn(degraded)`` against the clean images, plus the
    identity baseline. A mean over any infinite PSNR is infinite."""
    pairs = list(pairs)
    if not pairs:
        raise InvalidArgument("no pairs to evaluate")
    m, p, bm, bp = [], [], [], []
    for deg, clean in pairs:
        out = np.asarray(sr_fn(deg))
        if out.shape != np.shape(clean):
            raise InvalidArgument(f"sr_fn changed dimensions: {np.shape(clean)} -> {out.shape}")
        m.append(mse(out, clean))
        p.append(psnr(out, clean))
        bm.append(mse(deg, clean))
        bp.append(psnr(deg, clean))
    return SRReport(len(pairs), float(np.mean(m)), float(np.mean(p)),
                    float(np.mean(bm)), float(np.mean(bp)))


def data_sweep(n_items: int, fractions, train_fn: Callable, eval_fn: Callable,
               k: int = 5, seed: int = 0) -> list[dict]:
    """Train on ``k`` random subsets per fraction and summarize the scores.

    ``train_fn(indices, seed)`` returns a model and ``eval_fn(model)`` a
    score. Subset indices are sorted, so fraction 1.0 trains on the full set
    in its original order.
    """
    fractions = [float(f) for f in fractions]
    if any(not 0.0 < f <= 1.0 for f in fractions):
        raise InvalidArgument(f"fractions must lie in (0, 1], got {fractions}")
    rng = np.random.default_rng(seed)
    rows = []
    for f in fractions:
        size = int(round(f * n_items))
        if size < 1:
            raise InvalidArgument(f"fraction {f} of {n_items} items is an empty subset")
        scores = []
        for j in range(k):
            idx = np.sort(rng.choice(n_items, size=size, replace=False))
            scores.append(float(eval_fn(train_fn(idx.tolist(), seed + j))))
        rows.append({"fraction": f, "n_train": size, "scores": scores,
                     "mean": float(np.mean(scores)), "std": float(np.std(scores))})
    means = [r["mean"] for r in rows]
    for r, nondecreasing in zip(rows, [True] + [b >= a for a, b in zip(means, means[1:])]):
        r["monotone_so_far"] = nondecreasing
    return rows


def bench_throughput(frames, pipeline: Pipeline, repetitions: int = 3) -> dict:
    """Time :func:`urgr_infer` over ``(frame, detector)`` pairs.

    Latencies are per frame; ``hz`` is the reciprocal of the median latency.
    """
    frames = list(frames)
    if len(frames) < 10:
        raise InvalidArgument("benchmark needs at least 10 frames")
    if repetitions < 1:
        raise InvalidArgument("repetitions must be >= 1")
    urgr_infer(frames[0][0], frames[0][1], pipeline)  # warm-up
    lat = []
    for _ in range(repetitions):
        for frame, det in frames:
            t0 = time.perf_counter()
            urgr_infer(frame, det, pipeline)
            lat.append((time.perf_counter() - t0) * 1000.0)
    lat = np.array(lat)
    p50 = float(np.median(lat))
    return {
        "hz": 1000.0 / p50,
        "p50_ms": p50,
        "p95_ms": float(np.percentile(lat, 95)),
        "mean_ms": float(lat.mean()),
        "n_frames": len(frames),
        "repetitions": repetitions,
        "reference_hz": REFERENCE_HZ,
    }

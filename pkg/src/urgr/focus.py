"""User localization: detector interface, bounding-box extension, crop and resize."""

from __future__ import annotations

import json
import math
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from ._validation import InvalidArgument, NotFound, check_image
from .imaging import bicubic_resize, write_image


@dataclass(frozen=True)
class BBox:
    x0: float
    y0: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InvalidArgument(f"bounding box must have positive size, got {self.w}x{self.h}")

    @property
    def diagonal(self) -> float:
        return math.hypot(self.w, self.h)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x0 + self.w / 2.0, self.y0 + self.h / 2.0)

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.w, self.h]

    @classmethod
    def from_list(cls, values) -> "BBox":
        if len(values) != 4:
            raise InvalidArgument(f"bbox must be [x0, y0, w, h], got {values!r}")
        return cls(*(float(v) for v in values))

    def intersects(self, frame_h: int, frame_w: int) -> bool:
        return (self.x0 < frame_w and self.y0 < frame_h
                and self.x0 + self.w > 0 and self.y0 + self.h > 0)


@dataclass(frozen=True)
class FocusConfig:
    a: float = 10.0
    target_size: int = 512
    fill: str = "zero"

    def __post_init__(self):
        if not self.a > 0:
            raise InvalidArgument(f"user-to-image ratio a must be positive, got {self.a}")
        if int(self.target_size) != self.target_size or self.target_size < 32:
            raise InvalidArgument(f"target_size must be an integer >= 32, got {self.target_size}")
        if self.fill not in ("zero", "replicate"):
            raise InvalidArgument(f"fill must be 'zero' or 'replicate', got {self.fill!r}")

    def to_dict(self) -> dict:
        return {"a": self.a, "target_size": self.target_size, "fill": self.fill}

    @classmethod
    def from_dict(cls, d: dict) -> "FocusConfig":
        return cls(**d)


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    confidence: float = 1.0
    class_tag: str = "person"


class Detector(Protocol):
    def __call__(self, img: np.ndarray) -> Detection: ...


class OracleDetector:
    """Returns a known ground-truth box, e.g. the ``bbox`` field of a manifest row.

    ``bbox=None`` models a frame with nobody in it.
    """

    def __init__(self, bbox=None):
        if bbox is not None and not isinstance(bbox, BBox):
            bbox = BBox.from_list(bbox)
        self.bbox = bbox

    def __call__(self, img) -> Detection:
        if self.bbox is None:
            raise NotFound("no person in frame")
        img = np.asarray(img)
        if not self.bbox.intersects(img.shape[0], img.shape[1]):
            raise NotFound("ground-truth box lies outside the frame")
        return Detection(self.bbox, 1.0, "person")


class ExternalDetector:
    """Adapter around an external person-detector executable.

    The command is invoked as ``command... IMAGE_PATH`` and must print a JSON
    list ``[{"bbox": [x0, y0, w, h], "conf": p, "class": "person"}, ...]`` on
    stdout. Not reentrant: calls are expected to be serialized.
    """

    def __init__(self, command, timeout: float = 60.0):
        self.command = [command] if isinstance(command, str) else list(command)
        self.timeout = timeout

    def __call__(self, img) -> Detection:
        img = check_image(img, channels=3)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "frame.png"
            write_image(path, img)
            proc = subprocess.run(
                [*self.command, str(path)],
                capture_output=True, text=True, timeout=self.timeout, check=False,
            )
        if proc.returncode != 0:
            raise RuntimeError(f"detector exited with {proc.returncode}: {proc.stderr.strip()}")
        return parse_detections(proc.stdout, img.shape[0], img.shape[1])


def parse_detections(text: str, frame_h: int, frame_w: int) -> Detection:
    """Pick the highest-confidence person box from a detector JSON document."""
    try:
        rows = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"detector output is not JSON: {exc}") from exc
    if not isinstance(rows, list):
        raise InvalidArgument("detector output must be a JSON list")
    best = None
    for row in rows:
        if row.get("class", "person") != "person":
            continue
        conf = float(row.get("conf", 0.0))
        box = BBox.from_list(row["bbox"])
        if not box.intersects(frame_h, frame_w):
            continue
        if best is None or conf > best.confidence:
            best = Detection(box, conf, "person")
    if best is None:
        raise NotFound("detector found no person")
    return best


def detect_user(img, detector: Detector) -> Detection:
    return detector(img)


def extend_bbox(bbox: BBox, a: float, frame_h: int | None = None, frame_w: int | None = None) -> BBox:
    """Grow ``bbox`` by ``b/a`` in width and height, keeping its center.

    ``b`` is the box diagonal. The result may extend past the frame; the frame
    size is accepted for interface symmetry and is not used to clip.
    """
    if not a > 0:
        raise InvalidArgument(f"a must be positive, got {a}")
    pad = bbox.diagonal / a
    return BBox(bbox.x0 - pad / 2.0, bbox.y0 - pad / 2.0, bbox.w + pad, bbox.h + pad)


def crop_and_resize(img, bbox: BBox, target: int, fill: str = "zero") -> np.ndarray:
    """Crop ``bbox`` (zero-filling any out-of-frame area) and resize to ``target``×``target``.

    Box edges are rounded to whole pixels.
    """
    img = check_image(img)
    fh, fw = img.shape[:2]
    if not bbox.intersects(fh, fw):
        raise InvalidArgument("bounding box lies entirely outside the frame")
    x0 = int(math.floor(bbox.x0 + 0.5))
    y0 = int(math.floor(bbox.y0 + 0.5))
    x1 = max(int(math.floor(bbox.x0 + bbox.w + 0.5)), x0 + 1)
    y1 = max(int(math.floor(bbox.y0 + bbox.h + 0.5)), y0 + 1)
    if fill == "replicate":
        ys = np.clip(np.arange(y0, y1), 0, fh - 1)
        xs = np.clip(np.arange(x0, x1), 0, fw - 1)
        crop = img[np.ix_(ys, xs)]
    else:
        crop = np.zeros((y1 - y0, x1 - x0, img.shape[2]))
        sy0, sy1 = max(y0, 0), min(y1, fh)
        sx0, sx1 = max(x0, 0), min(x1, fw)
        if sy1 > sy0 and sx1 > sx0:
            crop[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = img[sy0:sy1, sx0:sx1]
    return bicubic_resize(crop, target, target)


def focus_pipeline(img, detector: Detector, cfg: FocusConfig | None = None) -> np.ndarray:
    cfg = cfg or FocusConfig()
    img = check_image(img, channels=3)
    det = detect_user(img, detector)
    box = extend_bbox(det.bbox, cfg.a, img.shape[0], img.shape[1])
    return crop_and_resize(img, box, cfg.target_size, cfg.fill)

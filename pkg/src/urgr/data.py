"""Datasets: JSONL manifests, the synthetic gesture corpus and degradation pairs."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import cv2
import numpy as np

from ._validation import InvalidArgument, check_image, from_uint8, to_uint8
from .focus import BBox, FocusConfig, OracleDetector, focus_pipeline
from .imaging import DegradationConfig, degrade, read_image, write_image

CLASS_NAMES = ("null", "pointing", "thumbs-up", "thumbs-down", "beckoning", "stop")
NUM_CLASSES = len(CLASS_NAMES)
MAX_DISTANCE = 25.0


def class_name(index: int) -> str:
    check_label(index)
    return CLASS_NAMES[index - 1]


def check_label(label) -> int:
    if isinstance(label, bool) or int(label) != label or not 1 <= label <= NUM_CLASSES:
        raise InvalidArgument(f"class must be an integer in 1..{NUM_CLASSES}, got {label!r}")
    return int(label)


class ManifestError(InvalidArgument):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class Sample:
    label: int
    distance: float
    path: str | None = None
    image: np.ndarray | None = field(default=None, repr=False)
    bbox: list | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        check_label(self.label)
        if not 0.0 <= self.distance <= MAX_DISTANCE:
            raise InvalidArgument(f"distance must lie in [0, {MAX_DISTANCE}] m, got {self.distance}")
        if self.path is None and self.image is None:
            raise InvalidArgument("sample needs an image path or an inline image")
        if self.bbox is not None:
            BBox.from_list(self.bbox)

    def load(self, root: Path | None = None) -> np.ndarray:
        if self.image is not None:
            if self.image.dtype == np.uint8:
                return from_uint8(self.image)
            return check_image(self.image, channels=3)
        p = Path(self.path)
        if root is not None and not p.is_absolute():
            p = Path(root) / p
        return read_image(p)

    def detector(self) -> OracleDetector:
        return OracleDetector(self.bbox)

    def to_row(self) -> dict:
        if self.path is None:
            raise InvalidArgument("inline samples cannot be written to a manifest")
        row = {"path": self.path, "class": self.label, "distance_m": self.distance}
        if self.bbox is not None:
            row["bbox"] = list(self.bbox)
        row.update(self.extra)
        return row


@dataclass
class DatasetManifest:
    samples: list
    split: str = "train"
    note: str = ""
    root: Path | None = None

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def subset(self, indices) -> "DatasetManifest":
        return DatasetManifest([self.samples[i] for i in indices], self.split, self.note, self.root)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples])

    def class_histogram(self) -> dict:
        counts = Counter(s.label for s in self.samples)
        return {k: counts.get(k, 0) for k in range(1, NUM_CLASSES + 1)}

    def distance_histogram(self) -> dict:
        counts = Counter(distance_bin(s.distance) for s in self.samples)
        return {k: counts.get(k, 0) for k in range(26)}

    def balance(self) -> float:
        """Smallest class count over largest (1.0 means perfectly balanced)."""
        counts = list(self.class_histogram().values())
        return min(counts) / max(counts) if max(counts) else 0.0

    def load_image(self, i: int) -> np.ndarray:
        return self.samples[i].load(self.root)


def distance_bin(d: float) -> int:
    """Bins ``[k, k+1)`` for k = 0..24 and a final bin 25 holding exactly 25 m."""
    return min(int(math.floor(d)), 25)


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        for s in manifest.samples:
            fh.write(json.dumps(s.to_row(), sort_keys=True) + "\n")


def load_manifest(path, split: str | None = None) -> DatasetManifest:
    path = Path(path)
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON ({exc.msg})", lineno) from exc
            if not isinstance(row, dict):
                raise ManifestError("row must be a JSON object", lineno)
            missing = {"path", "class", "distance_m"} - set(row)
            if missing:
                raise ManifestError(f"missing fields {sorted(missing)}", lineno)
            extra = {k: v for k, v in row.items() if k not in ("path", "class", "distance_m", "bbox")}
            try:
                samples.append(Sample(label=row["class"], distance=float(row["distance_m"]),
                                      path=row["path"], bbox=row.get("bbox"), extra=extra))
            except (InvalidArgument, TypeError, ValueError) as exc:
                raise ManifestError(str(exc), lineno) from exc
    return DatasetManifest(samples, split or path.stem, f"loaded from {path.name}", path.parent)


# --------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class SynthConfig:
    count: int = 600
    seed: int = 0
    height: int = 480
    width: int = 640
    d_min: float = 0.0
    d_max: float = 25.0
    k: float = 2400.0
    blur_per_m: float = 0.08
    noise_per_m: float = 0.004
    clutter: int = 12

    def __post_init__(self):
        if not 0.0 <= self.d_min <= self.d_max <= MAX_DISTANCE:
            raise InvalidArgument(f"distance range must satisfy 0 <= d_min <= d_max <= 25")
        if self.count < 0:
            raise InvalidArgument("count must be non-negative")
        if self.d_max > 0 and self.k / self.d_max < 12:
            raise InvalidArgument("figure height k/d_max falls below the 12 px floor")

    def figure_height(self, d: float) -> float:
        """Figure height in pixels, capped at the frame height for close range."""
        return self.height if d <= 0 else min(self.k / d, float(self.height))

    def to_dict(self) -> dict:
        return asdict(self)


def _background(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    h, w = cfg.height, cfg.width
    top, bottom = rng.uniform(0.25, 0.85, 3), rng.uniform(0.2, 0.8, 3)
    t = np.linspace(0.0, 1.0, h)[:, None, None]
    img = np.broadcast_to(top * (1 - t) + bottom * t, (h, w, 3)).copy()
    for _ in range(cfg.clutter):
        color = tuple(float(c) for c in rng.uniform(0.1, 0.95, 3))
        if rng.random() < 0.5:
            x0, y0 = int(rng.integers(0, w)), int(rng.integers(0, h))
            x1 = x0 + int(rng.integers(10, w // 4))
            y1 = y0 + int(rng.integers(10, h // 4))
            cv2.rectangle(img, (x0, y0), (x1, y1), color, -1)
        else:
            center = (int(rng.integers(0, w)), int(rng.integers(0, h)))
            cv2.circle(img, center, int(rng.integers(5, h // 8)), color, -1, lineType=cv2.LINE_AA)
    return img


def _arm_pose(label: int, sx: float, s: int, u: float) -> tuple[list, list]:
    """Polyline and decorations for the gesturing arm; ``s`` is the outward sign."""
    if label == 1:
        return [(sx, 0.20), (sx + s * 0.03, 0.37), (sx + s * 0.04, 0.52)], []
    if label == 2:
        return [(sx, 0.20), (sx + s * 0.17, 0.21), (sx + s * 0.34, 0.21)], []
    if label == 3:
        hand = (sx + s * 0.19, 0.25)
        return [(sx, 0.20), (sx + s * 0.12, 0.36), hand], [("disc", (hand[0], hand[1] - 0.055), 0.032)]
    if label == 4:
        hand = (sx + s * 0.21, 0.42)
        return [(sx, 0.20), (sx + s * 0.12, 0.34), hand], [("disc", (hand[0], hand[1] + 0.055), 0.032)]
    if label == 5:
        return [(sx, 0.20), (sx + s * 0.17, 0.32), (sx + s * 0.05, 0.25)], []
    hand = (sx + s * 0.17, 0.05)
    return [(sx, 0.20), (sx + s * 0.17, 0.20), hand], [("bar", hand, 0.07)]


def render_figure(img: np.ndarray, mask: np.ndarray, label: int, cx: float, top: float,
                  u: float, side: int, clothes, skin) -> None:
    """Draw a stick figure of height ``u`` whose head top sits at ``top``."""
    scale = 16  # cv2 fixed-point shift of 4 bits

    def P(x, y):
        return (int(round((cx + x * u) * scale)), int(round((top + y * u) * scale)))

    def line(a, b, th, color):
        t = max(1, int(round(th * u)))
        cv2.line(img, P(*a), P(*b), color, t, cv2.LINE_AA, 4)
        cv2.line(mask, P(*a), P(*b), 1, t, cv2.LINE_8, 4)

    def disc(c, r, color):
        rr = max(1, int(round(r * u * scale)))
        cv2.circle(img, P(*c), rr, color, -1, cv2.LINE_AA, 4)
        cv2.circle(mask, P(*c), rr, 1, -1, cv2.LINE_8, 4)

    leg = 0.05
    for sgn in (-1, 1):
        line((sgn * 0.05, 0.55), (sgn * 0.08, 1.0 - leg / 2), leg, clothes)
    x0, y0 = P(-0.09, 0.16)
    x1, y1 = P(0.09, 0.56)
    cv2.rectangle(img, (x0, y0), (x1, y1), clothes, -1, cv2.LINE_AA, 4)
    cv2.rectangle(mask, (x0, y0), (x1, y1), 1, -1, cv2.LINE_8, 4)
    disc((0.0, 0.07), 0.07, skin)

    arm = 0.04
    rest_sx = -side * 0.09
    rest = [(rest_sx, 0.20), (rest_sx - side * 0.03, 0.37), (rest_sx - side * 0.04, 0.52)]
    pts, decorations = _arm_pose(label, side * 0.09, side, u)
    for poly in (rest, pts):
        line(poly[0], poly[1], arm, clothes)
        line(poly[1], poly[2], arm, clothes)
        disc(poly[2], 0.025, skin)
    for kind, c, size in decorations:
        if kind == "disc":
            disc(c, size, skin)
        else:
            line((c[0] - size, c[1]), (c[0] + size, c[1]), 0.035, skin)


@dataclass
class RenderedFrame:
    image: np.ndarray
    bbox: list | None
    side: int
    mask: np.ndarray | None = field(default=None, repr=False)


def render_sample(rng: np.random.Generator, label: int | None, d: float,
                  cfg: SynthConfig) -> RenderedFrame:
    """Render one frame; ``label=None`` renders an empty background.

    ``bbox = [x0, y0, w, h]`` is the tight box of the figure mask.
    """
    img = _background(rng, cfg)
    bbox = mask = None
    side = int(rng.choice([-1, 1]))
    clothes = tuple(float(c) for c in rng.uniform(0.0, 0.35, 3))
    skin = tuple(float(c) for c in np.array([0.95, 0.78, 0.62]) * rng.uniform(0.8, 1.05))
    if label is not None:
        u = cfg.figure_height(d)
        half_w = 0.45 * u
        cx = rng.uniform(half_w, max(half_w, cfg.width - half_w))
        top = rng.uniform(0.0, max(0.0, cfg.height - u))
        mask = np.zeros(img.shape[:2], dtype=np.uint8)
        render_figure(img, mask, label, cx, top, u, side, clothes, skin)
        ys, xs = np.nonzero(mask)
        bbox = [int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)]
    sigma = cfg.blur_per_m * d
    if sigma > 0:
        img = cv2.GaussianBlur(img, (0, 0), sigma, borderType=cv2.BORDER_REFLECT_101)
    noise = cfg.noise_per_m * d
    if noise > 0:
        img = img + rng.normal(0.0, noise, img.shape)
    return RenderedFrame(np.clip(img, 0.0, 1.0), bbox, side, mask)


def synth_generate(cfg: SynthConfig, out_dir=None) -> DatasetManifest:
    """Generate a labeled corpus.

    With ``out_dir`` the frames are written as PNGs next to ``manifest.jsonl``;
    otherwise samples carry their images inline as 8-bit arrays, so both
    routes see identical pixels.
    """
    rng = np.random.default_rng(cfg.seed)
    labels = np.resize(np.arange(1, NUM_CLASSES + 1), cfg.count)
    labels = rng.permutation(labels)
    distances = np.round(rng.uniform(cfg.d_min, cfg.d_max, cfg.count), 2)
    root = None
    if out_dir is not None:
        root = Path(out_dir)
        (root / "images").mkdir(parents=True, exist_ok=True)
    samples = []
    for i, (label, d) in enumerate(zip(labels.tolist(), distances.tolist())):
        frame = render_sample(rng, label, d, cfg)
        pixels = to_uint8(frame.image)
        extra = {"side": "right" if frame.side > 0 else "left"}
        if root is not None:
            rel = f"images/{i:06d}.png"
            write_image(root / rel, from_uint8(pixels))
            samples.append(Sample(label, d, path=rel, bbox=frame.bbox, extra=extra))
        else:
            samples.append(Sample(label, d, image=pixels, bbox=frame.bbox, extra=extra))
    manifest = DatasetManifest(samples, "train", f"synthetic seed={cfg.seed}", root)
    if root is not None:
        write_manifest(manifest, root / "manifest.jsonl")
        with open(root / "synth_config.json", "w") as fh:
            json.dump(cfg.to_dict(), fh, sort_keys=True, indent=2)
    return manifest


def render_empty_frame(seed: int = 0, cfg: SynthConfig | None = None) -> np.ndarray:
    cfg = cfg or SynthConfig()
    return render_sample(np.random.default_rng(seed), None, 0.0, cfg).image


# --------------------------------------------------------------------------
# degradation pairs


@dataclass
class DegradationPair:
    degraded: np.ndarray
    clean: np.ndarray

    def __post_init__(self):
        if self.degraded.shape != self.clean.shape:
            raise InvalidArgument("degraded and clean images must share dimensions")

    def __iter__(self):
        return iter((self.degraded, self.clean))


def build_degradation_set(manifest: DatasetManifest, focus_cfg: FocusConfig | None = None,
                          degradation_cfg: DegradationConfig | None = None,
                          detector=None, d_range=(2.0, 8.0)) -> list[DegradationPair]:
    """Focus every sample taken at 2..8 m and pair it with its degraded copy.

    The focused frame is quantized to 8 bits before degrading so a pair can be
    stored as PNG files without changing either image.
    """
    focus_cfg = focus_cfg or FocusConfig()
    degradation_cfg = degradation_cfg or DegradationConfig()
    lo, hi = d_range
    pairs = []
    for i, s in enumerate(manifest.samples):
        if not lo <= s.distance <= hi:
            continue
        det = detector if detector is not None else s.detector()
        clean = focus_pipeline(manifest.load_image(i), det, focus_cfg)
        clean = np.rint(clean * 255.0) / 255.0
        pairs.append(DegradationPair(degrade(clean, degradation_cfg), clean))
    if not pairs:
        raise InvalidArgument(f"no samples with distance in [{lo}, {hi}] m")
    return pairs


def write_pairs(pairs, out_dir) -> None:
    out = Path(out_dir)
    (out / "degraded").mkdir(parents=True, exist_ok=True)
    (out / "clean").mkdir(parents=True, exist_ok=True)
    with open(out / "pairs.jsonl", "w") as fh:
        for i, p in enumerate(pairs):
            d, c = f"degraded/{i:06d}.png", f"clean/{i:06d}.png"
            write_image(out / d, p.degraded)
            write_image(out / c, p.clean)
            fh.write(json.dumps({"degraded": d, "clean": c}) + "\n")


def read_pairs(pairs_dir) -> list[DegradationPair]:
    root = Path(pairs_dir)
    index = root / "pairs.jsonl"
    if not index.exists():
        raise InvalidArgument(f"{index} not found")
    pairs = []
    with open(index) as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                pairs.append(DegradationPair(read_image(root / row["degraded"]),
                                             read_image(root / row["clean"])))
    return pairs

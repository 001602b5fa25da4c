"""Image operations: the degradation filters, Canny edges, bicubic resizing
and the MSE/PSNR quality metrics.

Images are float arrays of shape ``(H, W, C)`` with values in ``[0, 1]``.
All functions are pure and return new arrays.
"""

from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass

import cv2
import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from ._validation import (
    InvalidArgument,
    check_image,
    check_same_shape,
    from_uint8,
    to_uint8,
)

#: Sentinel returned by :func:`psnr` when the two images are identical.
PSNR_INFINITE = math.inf

SHARPEN_KERNEL = np.array(
    [[0.0, -1.0, 0.0],
     [-1.0, 5.0, -1.0],
     [0.0, -1.0, 0.0]]
)

# Border mode used for every convolution: reflect about the edge pixel
# (d c b | a b c d), which is cv2.BORDER_REFLECT_101.
_BORDER = "mirror"


@dataclass(frozen=True)
class DegradationConfig:
    smooth_kernel: int = 5
    smooth_sigma: float = 1.0
    jpeg_quality: int = 30

    def __post_init__(self):
        _check_kernel(self.smooth_kernel, self.smooth_sigma)
        _check_quality(self.jpeg_quality)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationConfig":
        unknown = set(d) - {"smooth_kernel", "smooth_sigma", "jpeg_quality"}
        if unknown:
            raise InvalidArgument(f"unknown degradation config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class QualityScore:
    mse: float
    psnr: float
    peak: float = 1.0

    @property
    def is_infinite(self) -> bool:
        return self.psnr == PSNR_INFINITE


def _check_kernel(kernel: int, sigma: float) -> None:
    if int(kernel) != kernel or kernel < 3 or kernel % 2 == 0:
        raise InvalidArgument(f"kernel size must be an odd integer >= 3, got {kernel}")
    if not sigma > 0:
        raise InvalidArgument(f"sigma must be positive, got {sigma}")


def _check_quality(quality: int) -> None:
    if int(quality) != quality or not 1 <= quality <= 100:
        raise InvalidArgument(f"JPEG quality must be an integer in [1, 100], got {quality}")


def gaussian_kernel(kernel: int = 5, sigma: float = 1.0) -> np.ndarray:
    """Normalized 2-D Gaussian kernel of odd size ``kernel``."""
    _check_kernel(kernel, sigma)
    r = kernel // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_channels(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = ndimage.correlate(img[:, :, c], kernel, mode=_BORDER)
    return out


def gaussian_smooth(img, kernel: int = 5, sigma: float = 1.0) -> np.ndarray:
    _check_kernel(kernel, sigma)
    img = check_image(img)
    out = _filter_channels(img, gaussian_kernel(kernel, sigma))
    # rounding can push a constant 1.0 image a few ulps outside [0, 1]
    return np.clip(out, 0.0, 1.0)


def sharpen(img) -> np.ndarray:
    img = check_image(img)
    return np.clip(_filter_channels(img, SHARPEN_KERNEL), 0.0, 1.0)


def jpeg_compress(img, quality: int = 30) -> np.ndarray:
    """Round-trip ``img`` through an 8-bit JPEG encode/decode."""
    _check_quality(quality)
    img = check_image(img, channels=3)
    buf = io.BytesIO()
    PILImage.fromarray(to_uint8(img), mode="RGB").save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    with PILImage.open(buf) as decoded:
        return from_uint8(np.asarray(decoded.convert("RGB")))


def degrade(img, cfg: DegradationConfig | None = None) -> np.ndarray:
    """Smooth, then sharpen, then JPEG-compress."""
    cfg = cfg or DegradationConfig()
    smoothed = gaussian_smooth(img, cfg.smooth_kernel, cfg.smooth_sigma)
    return jpeg_compress(sharpen(smoothed), cfg.jpeg_quality)


def mse(a, b) -> float:
    """Mean squared error over all pixels and channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    if not peak > 0:
        raise InvalidArgument(f"peak value must be positive, got {peak}")
    err = mse(a, b)
    if err == 0.0:
        return PSNR_INFINITE
    return float(10.0 * math.log10(peak**2 / err))


def quality(a, b, peak: float = 1.0) -> QualityScore:
    return QualityScore(mse=mse(a, b), psnr=psnr(a, b, peak), peak=peak)


def to_gray(img: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma for 3-channel input; single-channel input is squeezed."""
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img[:, :, :3] @ np.array([0.299, 0.587, 0.114])


def canny_edges(img, sigma: float = 1.4, low: float = 0.1, high: float = 0.3) -> np.ndarray:
    """Binary Canny edge map of shape ``(H, W, 1)``.

    ``low`` and ``high`` are fractions of the maximum gradient magnitude in
    the image. A flat image has no edges.
    """
    if not 0.0 <= low < high <= 1.0:
        raise InvalidArgument(f"thresholds must satisfy 0 <= low < high <= 1, got {low}, {high}")
    if not sigma > 0:
        raise InvalidArgument(f"sigma must be positive, got {sigma}")
    img = check_image(img)
    gray = ndimage.gaussian_filter(to_gray(img), sigma, mode=_BORDER)
    gx = ndimage.sobel(gray, axis=1, mode=_BORDER)
    gy = ndimage.sobel(gray, axis=0, mode=_BORDER)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    edges = np.zeros(img.shape[:2] + (1,))
    if peak <= 1e-12:
        return edges
    # quantize so that ulp-level noise cannot flip suppression ties
    mag = np.round(mag / peak, 9)

    # direction binned to 0, 45, 90, 135 degrees
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    bins = (np.floor((angle + 22.5) / 45.0).astype(int)) % 4
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    padded = np.pad(mag, 1, mode="constant")
    h, w = mag.shape
    keep = np.zeros_like(mag, dtype=bool)
    for b, (dy, dx) in offsets.items():
        fwd = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        bwd = padded[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        keep |= (bins == b) & (mag > fwd) & (mag >= bwd)
    thin = np.where(keep, mag, 0.0)

    strong = thin >= high
    weak = thin >= low
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n:
        connected = np.zeros(n + 1, dtype=bool)
        connected[np.unique(labels[strong])] = True
        connected[0] = False
        edges[:, :, 0] = connected[labels]
    return edges


def bicubic_resize(img, out_h: int, out_w: int) -> np.ndarray:
    if int(out_h) != out_h or int(out_w) != out_w or out_h < 1 or out_w < 1:
        raise InvalidArgument(f"target size must be positive integers, got {out_h}x{out_w}")
    img = check_image(img)
    if img.shape[:2] == (out_h, out_w):
        return img.copy()
    out = cv2.resize(img, (int(out_w), int(out_h)), interpolation=cv2.INTER_CUBIC)
    if out.ndim == 2:
        out = out[:, :, None]
    return np.clip(out, 0.0, 1.0)


def read_image(path) -> np.ndarray:
    with PILImage.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def write_image(path, img) -> None:
    """Write ``img`` losslessly as an 8-bit PNG (values are rounded to 1/255)."""
    img = check_image(img)
    arr = to_uint8(img)
    mode = "RGB" if arr.shape[2] == 3 else "L"
    if mode == "L":
        arr = arr[:, :, 0]
    PILImage.fromarray(arr, mode=mode).save(path, format="PNG", optimize=False)

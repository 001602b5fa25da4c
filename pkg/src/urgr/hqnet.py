"""HQ-Net: three-pathway super-resolution network.

The edge pathway runs Canny edges through an HQ layer and a conv stack, the
attention pathway runs an HQ layer and self-attention over a pooled token
grid, and the autoencoder pathway encodes the image while keeping per-level
skip activations. The three latents are concatenated and decoded back to an
image through the skip connections.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ._validation import InvalidArgument, TrainingDiverged, check_image, check_image_batch
from .imaging import canny_edges
from .nn import ConvNormSELU, MultiHeadSelfAttention
from .pixelgraph import dropout


@dataclass(frozen=True)
class HQNetConfig:
    input_size: int = 512
    latent_edge: int = 284
    latent_attn: int = 552
    latent_ae: int = 2048
    scale_factor: float = 1.0
    canny_sigma: float = 1.4
    canny_low: float = 0.1
    canny_high: float = 0.3
    attention_heads: int = 4
    attention_dim: int = 64
    hq_channels: tuple = (32, 64)
    encoder_base: int = 32
    encoder_levels: int = 4
    token_grid: int = 16
    latent_grid: int = 4
    residual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hq_channels", tuple(self.hq_channels))
        if not 0 < self.scale_factor <= 1:
            raise InvalidArgument(f"scale_factor must lie in (0, 1], got {self.scale_factor}")
        if self.input_size % (2 ** self.encoder_levels):
            raise InvalidArgument(
                f"input_size {self.input_size} must be divisible by 2**encoder_levels")
        if self.input_size < max(8, self.token_grid):
            raise InvalidArgument("input_size is smaller than the attention token grid")
        if self.encoder_levels < 1 or len(self.hq_channels) != 2:
            raise InvalidArgument("need >= 1 encoder level and two HQ-layer widths")
        if not 0 <= self.canny_low < self.canny_high <= 1:
            raise InvalidArgument("Canny thresholds must satisfy 0 <= low < high <= 1")

    def width(self, c: int) -> int:
        return max(4, math.ceil(c * self.scale_factor))

    @property
    def edge_size(self) -> int:
        return math.ceil(self.scale_factor * self.latent_edge)

    @property
    def attn_size(self) -> int:
        return math.ceil(self.scale_factor * self.latent_attn)

    @property
    def ae_size(self) -> int:
        return math.ceil(self.scale_factor * self.latent_ae)

    @property
    def latent_total(self) -> int:
        return self.edge_size + self.attn_size + self.ae_size

    @property
    def attn_dim(self) -> int:
        d = self.width(self.attention_dim)
        return self.attention_heads * math.ceil(d / self.attention_heads)

    @property
    def encoder_channels(self) -> list[int]:
        return [self.width(self.encoder_base * 2**i) for i in range(self.encoder_levels)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hq_channels"] = list(self.hq_channels)
        d["scaled_latents"] = {
            "edge": self.edge_size, "attn": self.attn_size,
            "ae": self.ae_size, "total": self.latent_total,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HQNetConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names - {"scaled_latents"}
        if unknown:
            raise InvalidArgument(f"unknown HQ-Net config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class HQNetTrainConfig:
    lr: float = 0.00485
    batch_size: int = 16
    weight_decay: float = 0.0787
    dropout: float = 0.4
    epochs: int = 10
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HQNetTrainConfig":
        return cls(**d)


class HQLayer(nn.Module):
    """Two-branch block fused by element-wise product and a final conv.

    Branch one is a stack of conv/batch-norm/SELU blocks at full resolution.
    Branch two is a single strided conv brought back to full resolution by
    bicubic interpolation.
    """

    def __init__(self, c_in: int, c1: int, c2: int, c_out: int):
        super().__init__()
        self.block1 = ConvNormSELU(c_in, c1)
        self.block2 = ConvNormSELU(c1, c2)
        self.branch2 = nn.Conv2d(c_in, c2, 3, stride=2, padding=1)
        self.fuse = nn.Conv2d(c2, c_out, 3, padding=1)

    def forward(self, x, training: bool = False):
        if min(x.shape[-2:]) < 4:
            raise InvalidArgument(f"HQ layer needs spatial dims >= 4, got {tuple(x.shape[-2:])}")
        a = self.block2(self.block1(x, training), training)
        b = F.interpolate(self.branch2(x), size=a.shape[-2:], mode="bicubic", align_corners=False)
        assert a.shape == b.shape, "HQ-layer branch shapes diverged"
        return self.fuse(a * b)


def hq_layer(x: torch.Tensor, layer: HQLayer, training: bool = False) -> torch.Tensor:
    return layer(x, training)


class EdgePathway(nn.Module):
    def __init__(self, cfg: HQNetConfig):
        super().__init__()
        c1, c2 = (cfg.width(c) for c in cfg.hq_channels)
        self.hq = HQLayer(1, c1, c2, c2)
        self.down1 = nn.Conv2d(c2, c2, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(c2, c2, 3, stride=2, padding=1)
        self.grid = cfg.latent_grid
        self.proj = nn.Linear(c2 * cfg.latent_grid**2, cfg.edge_size)

    def forward(self, edges, training=False):
        x = self.hq(edges, training)
        x = F.selu(self.down2(F.selu(self.down1(x))))
        x = F.adaptive_avg_pool2d(x, self.grid).flatten(1)
        return self.proj(x)


class AttentionPathway(nn.Module):
    def __init__(self, cfg: HQNetConfig):
        super().__init__()
        c1, c2 = (cfg.width(c) for c in cfg.hq_channels)
        d = cfg.attn_dim
        self.hq = HQLayer(3, c1, c2, c2)
        self.tokens = cfg.token_grid
        self.grid = cfg.latent_grid
        self.embed = nn.Linear(c2, d)
        self.attn = MultiHeadSelfAttention(d, cfg.attention_heads)
        self.proj = nn.Linear(d * cfg.latent_grid**2, cfg.attn_size)

    def forward(self, x, training=False, weights_out=None):
        x = self.hq(x, training)
        x = F.adaptive_avg_pool2d(x, self.tokens)
        B, C, g, _ = x.shape
        t = self.embed(x.flatten(2).transpose(1, 2))
        a, w = self.attn(t, return_weights=True)
        if weights_out is not None:
            weights_out.append(w)
        a = a.transpose(1, 2).reshape(B, -1, g, g)
        a = F.adaptive_avg_pool2d(a, self.grid).flatten(1)
        return self.proj(a)


class AutoencoderPathway(nn.Module):
    """Encoder; skip activation ``i`` sits at resolution ``input / 2**i``."""

    def __init__(self, cfg: HQNetConfig):
        super().__init__()
        chans = cfg.encoder_channels
        self.blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        c_prev = 3
        for c in chans:
            self.blocks.append(ConvNormSELU(c_prev, c))
            self.downs.append(nn.Conv2d(c, c, 3, stride=2, padding=1))
            c_prev = c
        self.grid = cfg.latent_grid
        self.proj = nn.Linear(chans[-1] * cfg.latent_grid**2, cfg.ae_size)

    def forward(self, x, training=False):
        skips = []
        for block, down in zip(self.blocks, self.downs):
            x = block(x, training)
            skips.append(x)
            x = F.selu(down(x))
        z = F.adaptive_avg_pool2d(x, self.grid).flatten(1)
        return self.proj(z), skips


class Decoder(nn.Module):
    def __init__(self, cfg: HQNetConfig):
        super().__init__()
        chans = cfg.encoder_channels
        self.grid = cfg.latent_grid
        self.bottleneck = cfg.input_size // 2**cfg.encoder_levels
        self.c_top = chans[-1]
        self.expand = nn.Linear(cfg.latent_total, chans[-1] * cfg.latent_grid**2)
        self.ups = nn.ModuleList()
        self.merges = nn.ModuleList()
        c_prev = chans[-1]
        for c in reversed(chans):
            self.ups.append(nn.Conv2d(c_prev, c, 3, padding=1))
            self.merges.append(ConvNormSELU(2 * c, c))
            c_prev = c
        self.head = nn.Conv2d(chans[0], 3, 3, padding=1)

    def forward(self, latent, skips, training=False):
        B = latent.shape[0]
        x = F.selu(self.expand(latent)).reshape(B, self.c_top, self.grid, self.grid)
        if self.grid != self.bottleneck:
            x = F.interpolate(x, size=(self.bottleneck,) * 2, mode="bilinear", align_corners=False)
        for up, merge, skip in zip(self.ups, self.merges, reversed(skips)):
            x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            x = merge(torch.cat([F.selu(up(x)), skip], dim=1), training)
        return self.head(x)


class HQNet(nn.Module):
    def __init__(self, cfg: HQNetConfig):
        super().__init__()
        self.cfg = cfg
        self.edge = EdgePathway(cfg)
        self.attention = AttentionPathway(cfg)
        self.autoencoder = AutoencoderPathway(cfg)
        self.decoder = Decoder(cfg)

    def edge_maps(self, x: torch.Tensor) -> torch.Tensor:
        """Canny edge maps for a batch ``(B, 3, H, W)`` of images in [0, 1]."""
        cfg = self.cfg
        imgs = x.detach().permute(0, 2, 3, 1).cpu().numpy().astype(np.float64)
        maps = [canny_edges(np.clip(im, 0, 1), cfg.canny_sigma, cfg.canny_low, cfg.canny_high)
                for im in imgs]
        return torch.from_numpy(np.stack(maps)).permute(0, 3, 1, 2).to(x.dtype)

    def latents(self, x, edges=None, training=False, weights_out=None):
        if edges is None:
            edges = self.edge_maps(x)
        z_edge = self.edge(edges, training)
        z_attn = self.attention(x, training, weights_out)
        z_ae, skips = self.autoencoder(x, training)
        return z_edge, z_attn, z_ae, skips

    def forward(self, x, edges=None, training: bool = False, dropout_rate: float = 0.0,
                generator: torch.Generator | None = None):
        """Map ``(B, 3, H, W)`` images in [0, 1] to improved images in [0, 1]."""
        cfg = self.cfg
        if x.dim() != 4 or x.shape[1] != 3 or tuple(x.shape[-2:]) != (cfg.input_size,) * 2:
            raise InvalidArgument(
                f"expected input (B, 3, {cfg.input_size}, {cfg.input_size}), got {tuple(x.shape)}")
        z_edge, z_attn, z_ae, skips = self.latents(x, edges, training)
        z = torch.cat([z_edge, z_attn, z_ae], dim=1)
        if training and dropout_rate:
            z = dropout(z, dropout_rate, generator)
        out = self.decoder(z, skips, training)
        if cfg.residual:
            out = out + torch.logit(x.clamp(1e-4, 1 - 1e-4))
        return torch.sigmoid(out)


def build_hqnet(cfg: HQNetConfig, seed: int = 0, dtype=torch.float32) -> HQNet:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = HQNet(cfg)
    return model.to(dtype)


def _to_tensor(images: np.ndarray, dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))).to(dtype)


def _param_dtype(model: nn.Module):
    return next(model.parameters()).dtype


def edge_pathway(img, model: HQNet) -> np.ndarray:
    img = check_image(img, channels=3)
    x = _to_tensor(img[None], _param_dtype(model))
    with torch.no_grad():
        return model.edge(model.edge_maps(x)).numpy()[0]


def attention_pathway(img, model: HQNet) -> np.ndarray:
    img = check_image(img, channels=3)
    x = _to_tensor(img[None], _param_dtype(model))
    with torch.no_grad():
        return model.attention(x).numpy()[0]


def autoencoder_pathway(img, model: HQNet):
    img = check_image(img, channels=3)
    x = _to_tensor(img[None], _param_dtype(model))
    with torch.no_grad():
        z, skips = model.autoencoder(x)
    return z.numpy()[0], [s.numpy()[0] for s in skips]


def hqnet_forward(img, model: HQNet, batch_size: int = 16) -> np.ndarray:
    """Improve one image ``(H, W, 3)`` or a batch ``(N, H, W, 3)`` in evaluation mode."""
    single = np.asarray(img).ndim == 3
    batch = check_image_batch(img)
    dtype = _param_dtype(model)
    outs = []
    with torch.no_grad():
        for i in range(0, len(batch), batch_size):
            x = _to_tensor(batch[i:i + batch_size], dtype)
            outs.append(model(x).permute(0, 2, 3, 1).double().numpy())
    out = np.clip(np.concatenate(outs), 0.0, 1.0)
    return out[0] if single else out


@dataclass
class TrainResult:
    model: nn.Module
    history: list = field(default_factory=list)
    seconds: float = 0.0


def train_hqnet(pairs, cfg: HQNetConfig, hyper: HQNetTrainConfig | None = None,
                model: HQNet | None = None, log=None) -> TrainResult:
    """Minimize the MSE between the improved degraded image and the clean image.

    ``pairs`` is a sequence of ``(degraded, clean)`` images. Batches are
    visited in a seeded shuffle order and the loss of each batch is the mean
    over its pixels, channels and samples; the epoch loss is the
    sample-weighted mean of the batch losses in visiting order.
    """
    hyper = hyper or HQNetTrainConfig()
    pairs = list(pairs)
    if not pairs:
        raise InvalidArgument("cannot train HQ-Net on an empty pair set")
    degraded = check_image_batch(np.stack([np.asarray(p[0]) for p in pairs]), name="degraded")
    clean = check_image_batch(np.stack([np.asarray(p[1]) for p in pairs]), name="clean")
    if degraded.shape[1:3] != (cfg.input_size,) * 2 or clean.shape != degraded.shape:
        raise InvalidArgument(f"all pairs must be {cfg.input_size}x{cfg.input_size}x3")

    model = model or build_hqnet(cfg, hyper.seed)
    dtype = _param_dtype(model)
    X = _to_tensor(degraded, dtype)
    Y = _to_tensor(clean, dtype)
    E = model.edge_maps(X)
    opt = torch.optim.AdamW(model.parameters(), lr=hyper.lr, weight_decay=hyper.weight_decay)
    rng = np.random.default_rng(hyper.seed)
    gen = torch.Generator().manual_seed(hyper.seed + 1)
    history = []
    t0 = time.perf_counter()
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for i in range(0, len(order), hyper.batch_size):
            idx = torch.from_numpy(order[i:i + hyper.batch_size])
            out = model(X[idx], E[idx], training=True, dropout_rate=hyper.dropout, generator=gen)
            loss = F.mse_loss(out, Y[idx])
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / len(X))
        if log:
            log(f"epoch {epoch + 1}/{hyper.epochs} loss {history[-1]:.6f}")
    return TrainResult(model, history, time.perf_counter() - t0)

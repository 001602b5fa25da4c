"""GViT: pixel-graph convolutions as the token embedding of a vision transformer."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ._validation import InvalidArgument, TrainingDiverged, check_image_batch
from .data import NUM_CLASSES, check_label
from .hqnet import TrainResult
from .nn import TransformerBlock
from .pixelgraph import build_adjacency, degree_and_normalize, gcn_stack


@dataclass(frozen=True)
class GViTConfig:
    graph_grid: int = 64
    gc_dims: tuple = (16, 32)
    token_grid: int = 8
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 2.0
    dropout_between_gc: float = 0.4
    num_classes: int = NUM_CLASSES
    add_self_loops: bool = False

    def __post_init__(self):
        object.__setattr__(self, "gc_dims", tuple(self.gc_dims))
        if self.num_classes != NUM_CLASSES:
            raise InvalidArgument(f"num_classes is fixed at {NUM_CLASSES}")
        if not self.gc_dims or any(d % 2 for d in self.gc_dims):
            raise InvalidArgument(f"every GC output width must be even for GLU, got {self.gc_dims}")
        if self.graph_grid % self.token_grid:
            raise InvalidArgument("graph_grid must be a multiple of token_grid")
        if self.embed_dim % self.heads:
            raise InvalidArgument("embed_dim must be divisible by heads")
        if not 0.0 <= self.dropout_between_gc < 1.0:
            raise InvalidArgument("dropout_between_gc must lie in [0, 1)")

    @property
    def n_tokens(self) -> int:
        return self.token_grid**2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gc_dims"] = list(self.gc_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GViTConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidArgument(f"unknown GViT config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class GViTTrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    weight_decay: float = 1e-4
    epochs: int = 20
    seed: int = 0
    flip: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GViTTrainConfig":
        return cls(**d)


@dataclass
class ClassDistribution:
    probs: np.ndarray
    logits: np.ndarray | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape != (NUM_CLASSES,):
            raise InvalidArgument(f"distribution must have {NUM_CLASSES} entries")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-6:
            raise InvalidArgument("probabilities must be non-negative and sum to 1")

    @classmethod
    def from_logits(cls, logits) -> "ClassDistribution":
        z = np.asarray(logits, dtype=np.float64)
        e = np.exp(z - z.max())
        return cls(e / e.sum(), z)


class GViT(nn.Module):
    def __init__(self, cfg: GViTConfig):
        super().__init__()
        self.cfg = cfg
        dims = [3]
        self.gc_weights = nn.ParameterList()
        for d_out in cfg.gc_dims:
            w = torch.empty(dims[-1], d_out)
            nn.init.xavier_uniform_(w)
            self.gc_weights.append(nn.Parameter(w))
            dims.append(d_out // 2)
        patch = cfg.graph_grid // cfg.token_grid
        self.reduce = nn.Conv2d(dims[-1], cfg.embed_dim, kernel_size=patch, stride=patch)
        self.pos = nn.Parameter(torch.randn(1, cfg.n_tokens, cfg.embed_dim) * 0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.embed_dim, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.hidden = nn.Linear(cfg.embed_dim, cfg.embed_dim)
        self.classifier = nn.Linear(cfg.embed_dim, cfg.num_classes)
        self.prop = degree_and_normalize(
            build_adjacency(cfg.graph_grid, cfg.graph_grid, cfg.add_self_loops))

    def embed(self, x, training=False, generator=None):
        """GCN embedding: ``(B, 3, H, W)`` images to ``(B, T, D)`` tokens."""
        g = self.cfg.graph_grid
        if tuple(x.shape[-2:]) != (g, g):
            x = F.adaptive_avg_pool2d(x, g)
        B = x.shape[0]
        H = x.flatten(2).transpose(1, 2)
        H = gcn_stack(H, self.prop, list(self.gc_weights), self.cfg.dropout_between_gc,
                      training, generator)
        fmap = H.transpose(1, 2).reshape(B, -1, g, g)
        return self.reduce(fmap).flatten(2).transpose(1, 2)

    def encode(self, tokens, weights_out=None):
        if tokens.shape[1:] != (self.cfg.n_tokens, self.cfg.embed_dim):
            raise InvalidArgument(
                f"expected tokens (B, {self.cfg.n_tokens}, {self.cfg.embed_dim}), got {tuple(tokens.shape)}")
        x = tokens + self.pos
        for block in self.blocks:
            x = block(x, weights_out=weights_out)
        return self.norm(x)

    def forward(self, x, training: bool = False, generator: torch.Generator | None = None):
        """Class logits for ``(B, 3, H, W)`` images in [0, 1]."""
        if x.dim() != 4 or x.shape[1] != 3:
            raise InvalidArgument(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        tokens = self.encode(self.embed(x, training, generator))
        pooled = tokens.mean(dim=1)
        return self.classifier(F.gelu(self.hidden(pooled)))


def build_gvit(cfg: GViTConfig, seed: int = 0, dtype=torch.float32) -> GViT:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = GViT(cfg)
    return model.to(dtype)


def _dtype(model):
    return next(model.parameters()).dtype


def _to_tensor(images: np.ndarray, dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))).to(dtype)


def vit_encode(tokens, model: GViT, weights_out=None) -> torch.Tensor:
    """Positional encoding plus the transformer blocks, for ``(T, D)`` or ``(B, T, D)`` tokens."""
    squeeze = tokens.dim() == 2
    out = model.encode(tokens[None] if squeeze else tokens, weights_out)
    return out[0] if squeeze else out


def predict_logits(images, model: GViT, batch_size: int = 64) -> np.ndarray:
    batch = check_image_batch(images)
    dtype = _dtype(model)
    outs = []
    with torch.no_grad():
        for i in range(0, len(batch), batch_size):
            outs.append(model(_to_tensor(batch[i:i + batch_size], dtype)).double().numpy())
    return np.concatenate(outs)


def gvit_forward(img, model: GViT, training: bool = False,
                 generator: torch.Generator | None = None) -> ClassDistribution:
    batch = check_image_batch(img)
    if len(batch) != 1:
        raise InvalidArgument("gvit_forward takes a single image; use predict_logits for batches")
    with torch.no_grad():
        logits = model(_to_tensor(batch, _dtype(model)), training, generator)[0]
    return ClassDistribution.from_logits(logits.double().numpy())


def classify(dist: ClassDistribution) -> int:
    """1-based argmax; ties go to the lowest index."""
    return int(np.argmax(dist.probs)) + 1


def cross_entropy(dist: ClassDistribution, label: int) -> float:
    """``-log p[label]``, via log-sum-exp over logits when they are available."""
    label = check_label(label)
    if dist.logits is not None:
        z = dist.logits
        m = z.max()
        return float(m + np.log(np.sum(np.exp(z - m))) - z[label - 1])
    with np.errstate(divide="ignore"):
        return float(-np.log(dist.probs[label - 1]))


def train_gvit(images, labels, cfg: GViTConfig, hyper: GViTTrainConfig | None = None,
               model: GViT | None = None, log=None) -> TrainResult:
    """Mini-batch cross-entropy descent on prepared (focused, optionally improved) images.

    Images are visited in a seeded shuffle; with ``flip`` each batch image is
    mirrored left-right with probability 1/2 (the gesturing side is arbitrary).
    """
    hyper = hyper or GViTTrainConfig()
    X = check_image_batch(images)
    y = np.array([check_label(v) for v in labels]) - 1
    if len(X) != len(y):
        raise InvalidArgument("images and labels differ in length")
    model = model or build_gvit(cfg, hyper.seed)
    dtype = _dtype(model)
    Xt = _to_tensor(X, dtype)
    yt = torch.from_numpy(y)
    opt = torch.optim.AdamW(model.parameters(), lr=hyper.lr, weight_decay=hyper.weight_decay)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, hyper.epochs))
    rng = np.random.default_rng(hyper.seed)
    gen = torch.Generator().manual_seed(hyper.seed + 1)
    history = []
    t0 = time.perf_counter()
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(Xt))
        total, correct = 0.0, 0
        for i in range(0, len(order), hyper.batch_size):
            idx = order[i:i + hyper.batch_size]
            xb = Xt[torch.from_numpy(idx)]
            if hyper.flip:
                flip = torch.from_numpy(rng.random(len(idx)) < 0.5)
                xb = torch.where(flip[:, None, None, None], xb.flip(-1), xb)
            logits = model(xb, training=True, generator=gen)
            loss = F.cross_entropy(logits, yt[idx])
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            correct += int((logits.argmax(1) == yt[idx]).sum())
        sched.step()
        history.append({"epoch": epoch + 1, "loss": total / len(Xt), "accuracy": correct / len(Xt)})
        if log:
            log(f"epoch {epoch + 1}/{hyper.epochs} loss {history[-1]['loss']:.4f} "
                f"acc {history[-1]['accuracy']:.3f}")
    return TrainResult(model, history, time.perf_counter() - t0)

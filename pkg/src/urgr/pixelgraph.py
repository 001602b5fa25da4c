"""Pixel graphs over the 8-neighborhood lattice and graph-convolution layers.

Node ``r`` is pixel ``(y, x)`` with ``r = y * width + x``. Adjacency has no
self-loops unless ``add_self_loops`` is requested explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import torch
import torch.nn.functional as F

from ._validation import InvalidArgument, check_image


def build_adjacency(height: int, width: int, add_self_loops: bool = False) -> sp.csr_array:
    """Symmetric 0/1 adjacency of the ``height``×``width`` pixel lattice."""
    if height < 1 or width < 1:
        raise InvalidArgument(f"grid dimensions must be >= 1, got {height}x{width}")
    idx = np.arange(height * width).reshape(height, width)
    rows, cols = [], []
    # each undirected edge once: right, down, down-right, down-left
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        ys = slice(0, height - dy)
        xs = slice(max(0, -dx), width - max(0, dx))
        src = idx[ys, xs]
        dst = idx[dy:, :][: src.shape[0], max(0, dx): max(0, dx) + src.shape[1]]
        rows.append(src.ravel())
        cols.append(dst.ravel())
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    n = height * width
    i = np.concatenate([r, c])
    j = np.concatenate([c, r])
    if add_self_loops:
        i = np.concatenate([i, np.arange(n)])
        j = np.concatenate([j, np.arange(n)])
    E = sp.coo_array((np.ones(len(i)), (i, j)), shape=(n, n)).tocsr()
    E.sort_indices()
    return E


@dataclass
class NormalizedPropagation:
    """``D^-1/2 E D^-1/2`` together with the degree vector of ``E``."""

    matrix: sp.csr_array
    degree: np.ndarray
    _torch_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]

    def degree_matrix(self) -> sp.dia_array:
        return sp.diags_array(self.degree)

    def torch(self, dtype=torch.float32) -> torch.Tensor:
        key = dtype
        if key not in self._torch_cache:
            coo = self.matrix.tocoo()
            indices = torch.from_numpy(np.vstack([coo.row, coo.col]).astype(np.int64))
            values = torch.from_numpy(coo.data).to(dtype)
            self._torch_cache[key] = torch.sparse_coo_tensor(
                indices, values, coo.shape, check_invariants=True).coalesce()
        return self._torch_cache[key]


def degree_and_normalize(E) -> NormalizedPropagation:
    E = sp.csr_array(E, dtype=np.float64)
    if E.shape[0] != E.shape[1]:
        raise InvalidArgument(f"adjacency must be square, got {E.shape}")
    if (E != E.T).nnz:
        raise InvalidArgument("adjacency must be symmetric")
    deg = np.asarray(E.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        raise InvalidArgument("graph has an isolated node; degree normalization is undefined")
    inv_sqrt = 1.0 / np.sqrt(deg)
    D = sp.diags_array(inv_sqrt)
    A = sp.csr_array(D @ E @ D)
    A.sort_indices()
    return NormalizedPropagation(A, deg)


@dataclass
class PixelGraph:
    height: int
    width: int
    features: np.ndarray
    adjacency: sp.csr_array

    @property
    def n_nodes(self) -> int:
        return self.height * self.width


def image_to_graph(img, add_self_loops: bool = False) -> PixelGraph:
    img = check_image(img)
    h, w, c = img.shape
    return PixelGraph(h, w, img.reshape(h * w, c).copy(), build_adjacency(h, w, add_self_loops))


def write_edge_list(E, path) -> None:
    """Dump undirected edges as ``i j`` lines with ``i < j``."""
    coo = sp.coo_array(E)
    mask = coo.row < coo.col
    pairs = sorted(zip(coo.row[mask].tolist(), coo.col[mask].tolist()))
    with open(path, "w") as fh:
        for i, j in pairs:
            fh.write(f"{i} {j}\n")


def propagate(A: torch.Tensor, H: torch.Tensor) -> torch.Tensor:
    """Sparse ``A @ H`` for ``H`` of shape ``(n, f)`` or ``(B, n, f)``."""
    if H.dim() == 2:
        return torch.sparse.mm(A, H)
    B, n, f = H.shape
    flat = H.permute(1, 0, 2).reshape(n, B * f)
    return torch.sparse.mm(A, flat).reshape(n, B, f).permute(1, 0, 2)


def glu(x: torch.Tensor) -> torch.Tensor:
    """First half of the last axis gated by the sigmoid of the second half."""
    if x.shape[-1] % 2:
        raise InvalidArgument(f"GLU needs an even channel count, got {x.shape[-1]}")
    return F.glu(x, dim=-1)


def gc_layer(H, prop: NormalizedPropagation, weight: torch.Tensor,
             activation: Callable | None = None) -> torch.Tensor:
    """``activation(Â H W)``; ``activation=None`` is the identity."""
    H = torch.as_tensor(H, dtype=weight.dtype)
    if H.shape[-2] != prop.n_nodes:
        raise InvalidArgument(f"expected {prop.n_nodes} node rows, got {H.shape[-2]}")
    if H.shape[-1] != weight.shape[0]:
        raise InvalidArgument(f"feature width {H.shape[-1]} does not match weight {tuple(weight.shape)}")
    A = prop.torch(weight.dtype)
    if weight.shape[1] <= weight.shape[0]:
        out = propagate(A, H @ weight)
    else:
        out = propagate(A, H) @ weight
    return out if activation is None else activation(out)


def dropout(x: torch.Tensor, rate: float, generator: torch.Generator | None) -> torch.Tensor:
    """Inverted dropout drawing its mask from an explicit generator."""
    if not 0.0 <= rate < 1.0:
        raise InvalidArgument(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) >= rate
    return x * keep / (1.0 - rate)


def gcn_stack(H, prop: NormalizedPropagation, weights: Sequence[torch.Tensor],
              dropout_between: float = 0.4, training: bool = False,
              generator: torch.Generator | None = None) -> torch.Tensor:
    """GC layers with GLU activation; dropout between layers in training mode only."""
    if not weights:
        raise InvalidArgument("gcn_stack needs at least one layer")
    out = H
    for k, W in enumerate(weights):
        if k > 0 and training:
            out = dropout(out, dropout_between, generator)
        out = gc_layer(out, prop, W, glu)
    return out

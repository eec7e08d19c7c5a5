"""Coordinate-based function approximators.

Multiresolution hash-grid encodings feed small ReLU MLPs; output heads
cover strictly positive maps (exponential), unconstrained real maps
(identity), and complex volumes (two separate real networks for the real
and imaginary parts).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

POSITIVE_EXP = "POSITIVE_EXP"
LINEAR_REAL = "LINEAR_REAL"
COMPLEX_TWO_HEAD = "COMPLEX_TWO_HEAD"
HEADS = (POSITIVE_EXP, LINEAR_REAL, COMPLEX_TWO_HEAD)

# XOR-of-prime-multiplied-coordinates spatial hash
_HASH_PRIMES = (1, 2654435761, 805459861)


@dataclass
class HashEncodingConfig:
    """Geometry of a multiresolution hash encoding.

    T_table is the log2 of the per-level table size; level resolutions grow
    as a geometric series N_min, b*N_min, ..., b^(L-1)*N_min (floored).
    """

    L: int = 16
    T_table: int = 19
    F_dim: int = 2
    N_min: int = 16
    b: float = 1.382

    def __post_init__(self):
        if self.L < 1 or self.F_dim < 1 or self.N_min < 1 or self.b < 1.0:
            raise ValueError("invalid hash encoding configuration")
        res = self.level_resolutions()
        if any(r2 < r1 for r1, r2 in zip(res, res[1:])):
            raise ValueError("level resolutions must be non-decreasing")

    def level_resolutions(self):
        return [int(np.floor(self.N_min * self.b**l)) for l in range(self.L)]

    @property
    def out_dim(self) -> int:
        return self.L * self.F_dim


def growth_for_finest(finest, n_min, L) -> float:
    """Growth ratio placing the last level at the requested resolution."""
    if L == 1:
        return 1.0
    return float(np.exp(np.log(finest / n_min) / (L - 1)))


def default_encoding(max_dim) -> HashEncodingConfig:
    """Default grid: L=16, 2^19 entries, F=2, N_min=16, finest ~2x volume."""
    finest = max(2 * max_dim, 16)
    return HashEncodingConfig(L=16, T_table=19, F_dim=2, N_min=16,
                              b=growth_for_finest(finest, 16, 16))


def phase_encoding(max_dim) -> HashEncodingConfig:
    """Reduced grid for phase maps: N_min=1, 2^12 entries."""
    finest = max(2 * max_dim, 4)
    return HashEncodingConfig(L=16, T_table=12, F_dim=2, N_min=1,
                              b=growth_for_finest(finest, 1, 16))


def coil_encoding(max_dim) -> HashEncodingConfig:
    """Low-capacity grid for smooth coil sensitivities: L=8, N_min=2."""
    finest = max(max_dim, 4)
    return HashEncodingConfig(L=8, T_table=12, F_dim=2, N_min=2,
                              b=growth_for_finest(finest, 2, 8))


@dataclass
class FieldConfig:
    """Hash encoding plus MLP head description of one coordinate field."""

    encoding: HashEncodingConfig
    hidden_layers: int = 3
    hidden_width: int = 64
    head: str = LINEAR_REAL
    out_dim: int = 1

    def __post_init__(self):
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError("hidden_layers and hidden_width must be >= 1")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")


def coordinate_grid(shape) -> np.ndarray:
    """All voxel coordinates of a volume, normalized to [0, 1]^3.

    Row-major order matching C-order volume flattening; the first row maps
    to the first voxel.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or any(s < 1 for s in shape):
        raise ValueError(f"invalid volume shape {shape}")
    axes = [np.arange(s, dtype=np.float64) / max(s - 1, 1) for s in shape]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=-1)


def _hash_corners(corners, t_mask):
    """Spatial hash of integer corner coordinates into [0, 2^T)."""
    h = corners[..., 0] * _HASH_PRIMES[0]
    h = torch.bitwise_xor(h, corners[..., 1] * _HASH_PRIMES[1])
    h = torch.bitwise_xor(h, corners[..., 2] * _HASH_PRIMES[2])
    return torch.bitwise_and(h, t_mask)


_CORNER_OFFSETS = torch.tensor(
    [[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=torch.int64
)


class _CompactBag(torch.autograd.Function):
    """Weighted 8-corner gather whose backward scatters with index_add_.

    Functionally embedding_bag(mode="sum") with per-sample weights, but the
    stock dense backward sorts the index list on every call; accumulating
    into the (compact) table gradient directly is much cheaper.
    """

    @staticmethod
    def forward(ctx, tables, inv, w2):
        ctx.save_for_backward(inv, w2)
        ctx.n_rows = tables.shape[0]
        return nn.functional.embedding_bag(inv, tables,
                                           per_sample_weights=w2, mode="sum")

    @staticmethod
    def backward(ctx, grad_out):
        inv, w2 = ctx.saved_tensors
        fdim = grad_out.shape[1]
        contrib = (grad_out[:, None, :] * w2[:, :, None]).reshape(-1, fdim)
        grad_tables = grad_out.new_zeros(ctx.n_rows, fdim)
        grad_tables.index_add_(0, inv.reshape(-1), contrib)
        return grad_tables, None, None




class HashEncoder(nn.Module):
    """Learnable multiresolution hash tables with trilinear interpolation."""

    def __init__(self, cfg: HashEncodingConfig, dtype=torch.float64):
        super().__init__()
        self.cfg = cfg
        self.resolutions = cfg.level_resolutions()
        n_entries = 2**cfg.T_table
        tables = torch.empty(cfg.L * n_entries, cfg.F_dim, dtype=dtype)
        nn.init.uniform_(tables, -1e-4, 1e-4)
        self.tables = nn.Parameter(tables)
        self._t_mask = n_entries - 1
        res = torch.tensor(self.resolutions, dtype=torch.int64)
        self.register_buffer("_res", res, persistent=False)
        self.register_buffer("_level_offset", torch.arange(cfg.L) * n_entries,
                             persistent=False)
        self._grid_cache = None
        self._bound = False

    def _corner_weights(self, coords):
        """Hashed corner indices (N, L, 8) and trilinear weights (N, L, 8)."""
        offsets = _CORNER_OFFSETS.to(coords.device)
        res = self._res.to(coords.dtype)
        pos = coords[:, None, :] * res[None, :, None]  # (N, L, 3)
        i0 = pos.floor().long()
        i0 = torch.minimum(i0.clamp(min=0), (self._res - 1)[None, :, None])
        frac = pos - i0
        corners = i0[:, :, None, :] + offsets[None, None, :, :]  # (N, L, 8, 3)
        idx = _hash_corners(corners, self._t_mask) + self._level_offset[None, :, None]
        bits = offsets.to(coords.dtype)  # (8, 3)
        w = (bits[None, None] * frac[:, :, None, :]
             + (1 - bits[None, None]) * (1 - frac[:, :, None, :])).prod(-1)
        return idx, w

    def _grid_key(self, coords):
        return (coords.data_ptr(), coords.shape, coords._version)

    def bind_grid(self, coords):
        """Restrict the trainable tables to the rows a fixed grid touches.

        Rows never referenced by the coordinate set receive no gradient and
        do not affect the output, so dropping them from the parameter (and
        hence from the optimizer state) changes nothing numerically.  After
        binding, the encoder only accepts the bound coordinate set.
        """
        if self._bound:
            raise RuntimeError("encoder is already bound to a grid")
        with torch.no_grad():
            idx, w = self._corner_weights(coords)
            w2 = w.reshape(-1, 8).contiguous()
            uniq, inv = torch.unique(idx.reshape(-1, 8), return_inverse=True)
            compact = self.tables.data.index_select(0, uniq).clone()
        self.tables = nn.Parameter(compact)
        self._grid_cache = (self._grid_key(coords), inv.contiguous(), w2, uniq)
        self._bound = True

    def forward(self, coords):
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ValueError("coords must have shape (N, 3)")
        if coords.min() < 0 or coords.max() > 1:
            raise ValueError("coordinates must lie in [0, 1]^3")
        n = coords.shape[0]
        L = self.cfg.L
        if self._bound:
            if self._grid_cache[0] != self._grid_key(coords):
                raise RuntimeError("encoder is bound to a different coordinate grid")
            _, inv, w2, _ = self._grid_cache
            out = _CompactBag.apply(self.tables, inv, w2)
            return out.reshape(n, L * self.cfg.F_dim)
        if not coords.requires_grad:
            # fixed-grid fast path: corner indices and trilinear weights do
            # not depend on the tables, so cache them per coordinate set.
            # Only the touched table rows are gathered into a compact,
            # cache-resident block before the weighted 8-corner sum.
            key = self._grid_key(coords)
            if self._grid_cache is None or self._grid_cache[0] != key:
                idx, w = self._corner_weights(coords)
                w2 = w.reshape(-1, 8).contiguous()
                uniq, inv = torch.unique(idx.reshape(-1, 8), return_inverse=True)
                self._grid_cache = (key, inv.contiguous(), w2, uniq)
            _, inv, w2, uniq = self._grid_cache
            active = self.tables.index_select(0, uniq)
            out = _CompactBag.apply(active, inv, w2)
            return out.reshape(n, L * self.cfg.F_dim)
        idx, w = self._corner_weights(coords)
        vals = self.tables[idx.reshape(-1)].reshape(n, L, 8, self.cfg.F_dim)
        return (w[..., None] * vals).sum(dim=2).reshape(n, L * self.cfg.F_dim)


def _make_mlp(in_dim, cfg: FieldConfig, dtype):
    layers = [nn.Linear(in_dim, cfg.hidden_width, dtype=dtype), nn.ReLU()]
    for _ in range(cfg.hidden_layers - 1):
        layers += [nn.Linear(cfg.hidden_width, cfg.hidden_width, dtype=dtype), nn.ReLU()]
    layers.append(nn.Linear(cfg.hidden_width, cfg.out_dim, dtype=dtype))
    return nn.Sequential(*layers)


class Field(nn.Module):
    """Hash encoding -> ReLU MLP -> output head.

    POSITIVE_EXP applies elementwise exp, LINEAR_REAL is the identity, and
    COMPLEX_TWO_HEAD runs two independent encoder+MLP networks for the real
    and imaginary parts with no output activation.
    """

    def __init__(self, cfg: FieldConfig, dtype=torch.float64):
        super().__init__()
        self.cfg = cfg
        self.encoder = HashEncoder(cfg.encoding, dtype=dtype)
        self.mlp = _make_mlp(cfg.encoding.out_dim, cfg, dtype)
        if cfg.head == COMPLEX_TWO_HEAD:
            self.encoder_imag = HashEncoder(cfg.encoding, dtype=dtype)
            self.mlp_imag = _make_mlp(cfg.encoding.out_dim, cfg, dtype)

    def forward(self, coords):
        out = self.mlp(self.encoder(coords))
        if self.cfg.head == POSITIVE_EXP:
            # overflow guard: exact exp below e^8, linear continuation with
            # slope e^8 above.  Physical map ranges live well inside e^8;
            # the continuation keeps a restoring gradient so a voxel thrown
            # past the threshold by a loss transient can still come back
            # (a hard clamp would freeze it there), and exp can no longer
            # overflow during long training runs.
            return torch.exp(out.clamp(max=8.0)) * (1.0 + torch.relu(out - 8.0))
        if self.cfg.head == LINEAR_REAL:
            return out
        imag = self.mlp_imag(self.encoder_imag(coords))
        return torch.complex(out, imag)


def field_forward(field: Field, coords) -> torch.Tensor:
    """Evaluate a field on (N, 3) coordinates (NumPy array or tensor)."""
    if not isinstance(coords, torch.Tensor):
        p = next(field.parameters())
        coords = torch.as_tensor(coords, dtype=p.real.dtype if p.is_complex() else p.dtype)
    return field(coords)

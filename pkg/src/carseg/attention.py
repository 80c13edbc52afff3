"""Synced axial attention: column-then-row attention sharing one Q/K/V set.

A depthwise-conv residual supplies position information before the
projections. Both passes reuse the same queries and keys; the column pass
output feeds the row pass directly as values.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class AttentionConfig:
    heads: int = 4
    d_model: int = 64
    column_first: bool = True

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")

    @property
    def d_head(self):
        return self.d_model // self.heads

    @property
    def scale(self):
        return 1.0 / np.sqrt(self.d_head)


def _split_heads(x, heads):
    h, w, c = x.shape
    return x.reshape(h, w, heads, c // heads)


def axial_attention_core(q, k, v, heads, scale, column_first=True):
    """Axial mixing of H x W x C value maps with shared queries and keys."""
    h, w, _ = q.shape
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))

    def along_columns(values):
        qc = qh.transpose((1, 2, 0, 3))                       # W,heads,H,dh
        kc = kh.transpose((1, 2, 0, 3))
        vc = values.transpose((1, 2, 0, 3))
        att = T.softmax((qc @ kc.transpose((0, 1, 3, 2))) * scale, axis=-1)
        return (att @ vc).transpose((2, 0, 1, 3))             # H,W,heads,dh

    def along_rows(values):
        qr = qh.transpose((0, 2, 1, 3))                       # H,heads,W,dh
        kr = kh.transpose((0, 2, 1, 3))
        vr = values.transpose((0, 2, 1, 3))
        att = T.softmax((qr @ kr.transpose((0, 1, 3, 2))) * scale, axis=-1)
        return (att @ vr).transpose((0, 2, 1, 3))             # H,W,heads,dh

    first, second = (along_columns, along_rows) if column_first else (along_rows, along_columns)
    mixed = second(first(vh))
    return mixed.reshape(h, w, q.shape[2])


class SaaMixer:
    """Token mixer: positional depthwise residual, then synced axial attention."""

    def __init__(self, cfg: AttentionConfig, rng):
        self.cfg = cfg
        c = cfg.d_model
        self.cpe_w = Tensor(rng.normal(0.0, 0.02, size=(3, 3, 1, c)), requires_grad=True)
        std = 1.0 / np.sqrt(c)
        self.wq = Tensor(rng.normal(0.0, std, size=(1, 1, c, c)), requires_grad=True)
        self.wk = Tensor(rng.normal(0.0, std, size=(1, 1, c, c)), requires_grad=True)
        self.wv = Tensor(rng.normal(0.0, std, size=(1, 1, c, c)), requires_grad=True)
        self.wo = Tensor(rng.normal(0.0, std, size=(1, 1, c, c)), requires_grad=True)

    def params(self):
        return [("cpe_w", self.cpe_w), ("wq", self.wq), ("wk", self.wk),
                ("wv", self.wv), ("wo", self.wo)]

    def set_params(self, named):
        for name, value in named.items():
            setattr(self, name, value if isinstance(value, Tensor) else Tensor(value, requires_grad=True))

    def cpe(self, x):
        """Conditional positional encoding: x plus a depthwise 3x3 of x."""
        return x + T.conv2d(x, self.cpe_w, groups=self.cfg.d_model)

    def forward(self, x):
        h = self.cpe(x)
        q = T.conv2d(h, self.wq)
        k = T.conv2d(h, self.wk)
        v = T.conv2d(h, self.wv)
        mixed = axial_attention_core(q, k, v, self.cfg.heads, self.cfg.scale,
                                     self.cfg.column_first)
        return T.conv2d(mixed, self.wo)


class FlopCount(NamedTuple):
    core: int
    projection: int

    @property
    def total(self):
        return self.core + self.projection


def attention_flops(h, w, c, variant):
    """Multiply counts for the attention score+aggregate core of one layer.

    Dense attention touches every pixel pair; the axial variant only pairs
    positions sharing a row or a column. Q/K/V/output projections cost the
    same either way.
    """
    if h < 1 or w < 1 or c < 1:
        raise ValueError(f"dimensions must be positive, got {h}x{w}x{c}")
    n = h * w
    if variant == "dense":
        core = 2 * n * n * c
    elif variant == "saa":
        core = 2 * n * (h + w) * c
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return FlopCount(core=core, projection=4 * n * c * c)

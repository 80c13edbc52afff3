"""Pyramid upsampling to OS=8 with a bilinear residual around a fused branch.

The backbone's deepest feature map is bilinearly upsampled and added to a
multi-scale fusion branch (per-level convs, upsample, concat, parallel
dilated separable convs, calibration conv). The deepest map reaches the
fusion branch through a gradient cut, so only the residual path trains it.
A channel padding step lifts the residual to the output width when the
backbone is narrower than the decoder.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class FeaturePyramid:
    """Backbone feature maps ordered fine to coarse (OS 8, 16, 32)."""

    levels: list

    def __post_init__(self):
        if not self.levels:
            raise ShapeError("empty feature pyramid")
        for a, b in zip(self.levels, self.levels[1:]):
            ha, wa, _ = a.shape
            hb, wb, _ = b.shape
            if (hb, wb) != (-(-ha // 2), -(-wa // 2)):
                raise ShapeError(f"pyramid extents must halve: {a.shape} -> {b.shape}")

    @property
    def top(self):
        return self.levels[-1]

    @property
    def base_size(self):
        h, w, _ = self.levels[0].shape
        return h, w


def channel_norm(x, gamma, beta, eps=1e-5):
    """Per-channel normalization over spatial positions, learned affine."""
    m = x.mean(axis=(0, 1), keepdims=True)
    centered = x - m
    var = (centered * centered).mean(axis=(0, 1), keepdims=True)
    return centered / ((var + eps) ** 0.5) * gamma + beta


class Ejpu:
    """Residual bilinear path plus calibrated multi-scale fusion branch."""

    DILATIONS = (1, 2, 4, 8)

    def __init__(self, level_channels, width, c_out, rng, dilations=DILATIONS,
                 cal_std=1e-2, init_scale=1.0):
        if level_channels[-1] > c_out:
            raise ShapeError(f"top level has {level_channels[-1]} channels, more than c_out={c_out}")
        self.level_channels = tuple(level_channels)
        self.width = width
        self.c_out = c_out
        self.dilations = tuple(dilations)
        self._names = []
        cat = width * len(level_channels)

        def make(name, shape, std):
            t = Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)
            setattr(self, name, t)
            self._names.append(name)
            return t

        def make_affine(prefix, c):
            g = Tensor(np.ones(c), requires_grad=True)
            b = Tensor(np.zeros(c), requires_grad=True)
            setattr(self, prefix + "_gamma", g)
            setattr(self, prefix + "_beta", b)
            self._names += [prefix + "_gamma", prefix + "_beta"]

        for i, cin in enumerate(level_channels):
            make(f"level{i}_w", (3, 3, cin, width), init_scale / np.sqrt(9 * cin))
            make_affine(f"level{i}", width)
        for d in self.dilations:
            make(f"sep{d}_dw", (3, 3, 1, cat), init_scale / 3.0)
            make(f"sep{d}_pw", (1, 1, cat, width), init_scale / np.sqrt(cat))
            make_affine(f"sep{d}", width)
        make("cal_w", (1, 1, width * len(self.dilations), c_out), cal_std)
        make_affine("cal", c_out)
        c_top = level_channels[-1]
        if c_top < c_out:
            make("cpm_proj", (c_top, c_out - c_top), init_scale / np.sqrt(c_top))
            make("cpm_w", (1, 1, c_out, c_out), init_scale / np.sqrt(c_out))

    def params(self):
        return [(n, getattr(self, n)) for n in self._names]

    def set_params(self, named):
        for name, value in named.items():
            setattr(self, name, value if isinstance(value, Tensor) else Tensor(value, requires_grad=True))

    def jpu_branch(self, pyr):
        """Fuse all pyramid levels at OS=8; the top level enters detached."""
        if len(pyr.levels) < 2:
            raise ShapeError("fusion branch needs at least two pyramid levels")
        h8, w8 = pyr.base_size
        merged = []
        for i, level in enumerate(pyr.levels):
            if i == len(pyr.levels) - 1:
                level = T.stop_gradient(level)
            y = T.conv2d(level, getattr(self, f"level{i}_w"))
            y = channel_norm(y, getattr(self, f"level{i}_gamma"), getattr(self, f"level{i}_beta"))
            y = y.relu()
            if y.shape[:2] != (h8, w8):
                y = T.bilinear_resize(y, h8, w8)
            merged.append(y)
        cat = T.concat(merged, axis=-1)
        outs = []
        for d in self.dilations:
            y = T.conv2d(cat, getattr(self, f"sep{d}_dw"), dilation=d, groups=cat.shape[-1])
            y = T.conv2d(y, getattr(self, f"sep{d}_pw"))
            y = channel_norm(y, getattr(self, f"sep{d}_gamma"), getattr(self, f"sep{d}_beta"))
            outs.append(y.relu())
        return T.concat(outs, axis=-1)

    def cpm_pad(self, x, c_target):
        """Lift channel count with globally pooled context, then one 1x1 conv."""
        cin = x.shape[-1]
        if cin == c_target:
            return x
        if cin > c_target:
            raise ShapeError(f"channel padding cannot reduce {cin} -> {c_target}")
        h, w, _ = x.shape
        pooled = T.global_avg_pool(x).reshape(1, cin)
        pad = T.broadcast_to((pooled @ self.cpm_proj).reshape(1, 1, c_target - cin), (h, w, c_target - cin))
        return T.conv2d(T.concat([x, pad], axis=-1), self.cpm_w)

    def forward(self, pyr):
        h8, w8 = pyr.base_size
        residual = T.bilinear_resize(pyr.top, h8, w8)
        residual = self.cpm_pad(residual, self.c_out)
        fused = T.conv2d(self.jpu_branch(pyr), self.cal_w)
        fused = channel_norm(fused, self.cal_gamma, self.cal_beta).relu()
        return residual + fused

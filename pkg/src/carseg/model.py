"""Toy segmentation network: strided CNN backbone, OS=8 decoder, axial token
mixer, 1x1 classification head. The regularization terms attach to the mixer
output during training only; inference never sees them."""

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, SaaMixer
from .centers import LabelField, batch_centers, flatten_pair
from .losses import CarTerms, LossTerm, car_total
from .tensor import NumericError, ShapeError, Tensor, one_hot
from .upsampling import Ejpu, FeaturePyramid


@dataclass
class ModelConfig:
    stage_channels: tuple = (16, 32, 64, 64)   # at strides 4, 8, 16, 32
    decoder_width: int = 16
    decoder_channels: int = 64
    heads: int = 4
    n_class: int = 5
    upsampler: str = "ejpu"                    # or "dilated"
    ce_full_res: bool = True

    def __post_init__(self):
        if self.decoder_channels % self.heads:
            raise ValueError("decoder channels must divide evenly across heads")
        if self.upsampler not in ("ejpu", "dilated"):
            raise ValueError(f"unknown upsampler {self.upsampler!r}")


class Backbone:
    """Four strided conv+relu stages; stages at OS 8/16/32 feed the pyramid.

    In dilated mode the last two stages keep stride 1 with growing dilation,
    so the final map stays at OS=8.
    """

    def __init__(self, cfg, rng, init_scale=1.0):
        c = cfg.stage_channels
        self._names = []

        def make(name, cin, cout):
            std = init_scale * np.sqrt(2.0 / (9 * cin))
            t = Tensor(rng.normal(0.0, std, size=(3, 3, cin, cout)), requires_grad=True)
            setattr(self, name, t)
            self._names.append(name)

        make("stem1_w", 3, c[0])
        make("stem2_w", c[0], c[0])
        make("os8_w", c[0], c[1])
        make("os16_w", c[1], c[2])
        make("os32_w", c[2], c[3])

    def params(self):
        return [(n, getattr(self, n)) for n in self._names]

    def set_params(self, named):
        for name, value in named.items():
            setattr(self, name, value if isinstance(value, Tensor) else Tensor(value, requires_grad=True))

    def _check(self, img):
        h, w, _ = img.shape
        if h % 32 or w % 32:
            raise ShapeError(f"image extents must divide by 32, got {h}x{w}")

    def forward(self, img):
        self._check(img)
        x = T.conv2d(img, self.stem1_w, stride=2).relu()
        x = T.conv2d(x, self.stem2_w, stride=2).relu()
        f8 = T.conv2d(x, self.os8_w, stride=2).relu()
        f16 = T.conv2d(f8, self.os16_w, stride=2).relu()
        f32 = T.conv2d(f16, self.os32_w, stride=2).relu()
        return FeaturePyramid([f8, f16, f32])

    def forward_dilated(self, img):
        self._check(img)
        x = T.conv2d(img, self.stem1_w, stride=2).relu()
        x = T.conv2d(x, self.stem2_w, stride=2).relu()
        f8 = T.conv2d(x, self.os8_w, stride=2).relu()
        d16 = T.conv2d(f8, self.os16_w, stride=1, dilation=2).relu()
        return T.conv2d(d16, self.os32_w, stride=1, dilation=4).relu()


class SegModel:
    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        self.backbone = Backbone(cfg, rng)
        c_out = cfg.decoder_channels
        if cfg.upsampler == "ejpu":
            self.decoder = Ejpu(cfg.stage_channels[1:], cfg.decoder_width, c_out, rng)
        else:
            top = cfg.stage_channels[-1]
            self.proj_w = Tensor(rng.normal(0.0, 1.0 / np.sqrt(top), size=(1, 1, top, c_out)),
                                 requires_grad=True)
        self.mixer = SaaMixer(AttentionConfig(heads=cfg.heads, d_model=c_out), rng)
        self.head_w = Tensor(rng.normal(0.0, 1.0 / np.sqrt(c_out), size=(1, 1, c_out, cfg.n_class)),
                             requires_grad=True)
        self.head_b = Tensor(np.zeros(cfg.n_class), requires_grad=True)

    def params(self):
        named = [("backbone." + n, p) for n, p in self.backbone.params()]
        if self.cfg.upsampler == "ejpu":
            named += [("decoder." + n, p) for n, p in self.decoder.params()]
        else:
            named += [("decoder.proj_w", self.proj_w)]
        named += [("mixer." + n, p) for n, p in self.mixer.params()]
        named += [("head_w", self.head_w), ("head_b", self.head_b)]
        return named

    def features(self, img):
        """Pre-logit OS=8 feature map (the tensor the regularizers see).

        The mixer output is standardized per channel (no learned affine) so
        the feature scale cannot drift; center similarities then compare
        direction rather than magnitude.
        """
        if self.cfg.upsampler == "ejpu":
            feat = self.decoder.forward(self.backbone.forward(img))
        else:
            feat = T.conv2d(self.backbone.forward_dilated(img), self.proj_w).relu()
        mixed = self.mixer.forward(feat)
        m = mixed.mean(axis=(0, 1), keepdims=True)
        centered = mixed - m
        var = (centered * centered).mean(axis=(0, 1), keepdims=True)
        return centered / ((var + 1e-5) ** 0.5)

    def head_logits(self, feat):
        return T.conv2d(feat, self.head_w) + self.head_b

    def logits_full(self, img):
        h, w, _ = img.shape
        logits8 = self.head_logits(self.features(img))
        return T.bilinear_resize(logits8, h, w)

    def predict(self, img):
        """Argmax class map at image resolution."""
        img = img if isinstance(img, Tensor) else Tensor(img)
        return np.argmax(self.logits_full(img).data, axis=-1)

    def load_state(self, table):
        for name, p in self.params():
            if name not in table:
                raise ShapeError(f"checkpoint missing parameter {name}")
            arr = np.asarray(table[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"checkpoint shape {arr.shape} != {p.shape} for {name}")
            p.data = arr


def cross_entropy_loss(logits, field: LabelField):
    """Softmax cross-entropy averaged over non-ignored pixels."""
    h, w, n = logits.shape
    if field.shape != (h, w):
        raise ShapeError(f"labels {field.shape} do not match logits {(h, w)}")
    y = one_hot(field.labels, field.n_class)
    n_valid = int(y.sum())
    if n_valid == 0:
        return LossTerm(Tensor(0.0), vacuous=True)
    logp = T.log_softmax(logits.reshape(h * w, n), axis=1)
    nll = -(logp * y).sum()
    return LossTerm(nll * (1.0 / n_valid))


def poly_lr(base_lr, it, max_iter, power=0.9):
    return base_lr * (1.0 - it / max_iter) ** power


class SgdOptimizer:
    def __init__(self, params, momentum=0.9, weight_decay=1e-3):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for _, p in self.params]

    def step(self, lr):
        for i, (_, p) in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data
            self.velocity[i] = self.momentum * self.velocity[i] + g
            p.data = p.data - lr * self.velocity[i]

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None


def train_step(batch, model, car_cfg, optimizer, lr):
    """One SGD step over a list of (image Tensor, full-res LabelField) pairs.

    Cross-entropy supervises the (optionally full-resolution) logits; the
    regularization terms act on the mixer output at OS=8 with nearest-
    downsampled labels. Returns the per-term loss values.
    """
    nll_sum, valid_sum = None, 0
    flats = []
    for img, field in batch:
        feat = model.features(img)
        logits8 = model.head_logits(feat)
        if model.cfg.ce_full_res:
            h, w, _ = img.shape
            logits, lab = T.bilinear_resize(logits8, h, w), field
        else:
            logits, lab = logits8, _field_at(field, logits8.shape[:2])
        y = one_hot(lab.labels, lab.n_class)
        nv = int(y.sum())
        if nv:
            piece = -(T.log_softmax(logits.reshape(-1, lab.n_class), axis=1) * y).sum()
            nll_sum = piece if nll_sum is None else nll_sum + piece
            valid_sum += nv
        if car_cfg is not None:
            f8 = _field_at(field, feat.shape[:2])
            flats.append(flatten_pair(feat, f8))
    if valid_sum == 0:
        raise NumericError("batch contains no supervised pixels")
    ce = nll_sum * (1.0 / valid_sum)

    terms = None
    if car_cfg is not None:
        xf = T.concat([f[0] for f in flats], axis=0) if len(flats) > 1 else flats[0][0]
        yf = Tensor(np.concatenate([f[1].data for f in flats], axis=0))
        sig = Tensor(np.concatenate([f[2].data for f in flats], axis=0))
        centers = batch_centers([(f[0], f[1]) for f in flats], grad_through=car_cfg.grad_through_centers)
        terms = car_total(xf, yf, sig, centers, car_cfg)
        total = ce + terms.total
    else:
        total = ce

    metrics = {
        "ce": ce.item(),
        "intra": terms.intra.value.item() if terms else 0.0,
        "c2c": terms.c2c.value.item() if terms else 0.0,
        "c2p": terms.c2p.value.item() if terms else 0.0,
        "total": total.item(),
    }
    if not np.isfinite(total.data):
        raise NumericError(f"non-finite loss: {metrics}")
    optimizer.zero_grad()
    total.backward()
    optimizer.step(lr)
    return metrics


def _field_at(field, hw):
    labels = T.nearest_downsample(field.labels, hw[0], hw[1])
    return LabelField(labels, field.n_class)


# ---- checkpoint file -------------------------------------------------------

MAGIC = b"CSG1"
VERSION = 1


def config_digest(text):
    return hashlib.sha256(text.encode("utf-8")).digest()


def save_checkpoint(path, named_params, digest=b"\x00" * 32):
    if len(digest) != 32:
        raise ValueError("digest must be 32 bytes")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(digest)
        fh.write(struct.pack("<I", len(named_params)))
        for name, p in named_params:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            arr = np.asarray(p.data, dtype="<f4")
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ShapeError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ShapeError(f"unsupported checkpoint version {version}")
    digest = blob[8:40]
    (count,) = struct.unpack_from("<I", blob, 40)
    off = 44
    table = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        table[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
    return table, digest

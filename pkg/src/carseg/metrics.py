"""Evaluation: confusion-matrix mIOU, class dependency maps over a split,
and single-pixel feature relation maps."""

from typing import NamedTuple

import numpy as np

from .centers import LabelField, batch_centers, flatten_pair
from .tensor import IGNORE, ShapeError, Tensor, nearest_downsample


def confusion_matrix(pred, gt, n_class, ignore=IGNORE):
    pred = np.asarray(pred).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    keep = gt != ignore
    idx = n_class * gt[keep].astype(np.int64) + pred[keep].astype(np.int64)
    return np.bincount(idx, minlength=n_class * n_class).reshape(n_class, n_class)


class IouReport(NamedTuple):
    per_class: np.ndarray   # NaN for classes absent from both pred and gt
    mean: float


def iou_from_confusion(cm):
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    per_class = np.full(cm.shape[0], np.nan)
    active = denom > 0
    per_class[active] = tp[active] / denom[active]
    if not active.any():
        raise ShapeError("confusion matrix is empty")
    return IouReport(per_class, float(np.nanmean(per_class)))


def eval_miou(model, samples):
    """Per-class IOU and mean over a list of dataset samples."""
    if not samples:
        raise ShapeError("empty split")
    n = model.cfg.n_class
    cm = np.zeros((n, n), dtype=np.int64)
    for s in samples:
        pred = model.predict(s.image_float())
        cm += confusion_matrix(pred, s.labels, n)
    return iou_from_confusion(cm)


def split_centers(model, samples):
    """Class centers of the pre-logit features accumulated over a split."""
    flats = []
    for s in samples:
        feat = model.features(Tensor(s.image_float()))
        h8, w8, _ = feat.shape
        field = LabelField(nearest_downsample(s.labels, h8, w8), model.cfg.n_class)
        xf, yf, _ = flatten_pair(feat, field)
        flats.append((xf, yf))
    return batch_centers(flats)


def class_dependency_map(model, samples):
    """Softmax-normalized center-to-center similarity over a whole split.

    Returns (matrix, present, mean_offdiag); rows and columns of absent
    classes are zero and excluded from the off-diagonal mean.
    """
    if not samples:
        raise ShapeError("empty split")
    centers = split_centers(model, samples)
    return dependency_from_centers(centers.mu.data, centers.present)


def dependency_from_centers(mu, present):
    mu = np.asarray(mu, dtype=np.float64)
    n, c = mu.shape
    idx = np.nonzero(present)[0]
    matrix = np.zeros((n, n))
    if idx.size:
        sub = mu[idx]
        logits = sub @ sub.T / np.sqrt(c)
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        matrix[np.ix_(idx, idx)] = e / e.sum(axis=1, keepdims=True)
    off = matrix[np.ix_(idx, idx)][~np.eye(idx.size, dtype=bool)]
    mean_off = float(off.mean()) if off.size else 0.0
    return matrix, np.asarray(present, dtype=bool), mean_off


def pixel_relation_map(model, image, pixel):
    """Dot products between one marked feature-map position and all positions.

    The pixel is given in feature-map coordinates; returns the raw field and
    a min-max normalized copy in [0, 1].
    """
    feat = model.features(Tensor(np.asarray(image, dtype=np.float64))).data
    h, w, _ = feat.shape
    r, c = pixel
    if not (0 <= r < h and 0 <= c < w):
        raise ShapeError(f"pixel {pixel} outside {h}x{w} feature map")
    raw = feat @ feat[r, c]
    lo, hi = raw.min(), raw.max()
    norm = np.zeros_like(raw) if hi == lo else (raw - lo) / (hi - lo)
    return raw, norm

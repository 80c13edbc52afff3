"""Ground-truth class centers: per-class mean features with ignore handling."""

from dataclasses import dataclass

import numpy as np

from .tensor import IGNORE, ShapeError, Tensor, one_hot, stop_gradient


@dataclass
class LabelField:
    """Per-pixel integer class labels; IGNORE marks excluded pixels."""

    labels: np.ndarray
    n_class: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        valid = self.labels[self.labels != IGNORE]
        if valid.size and (valid.min() < 0 or valid.max() >= self.n_class):
            raise ShapeError(f"labels outside [0, {self.n_class}) found")

    @property
    def shape(self):
        return self.labels.shape


@dataclass
class ClassCenters:
    """Per-class mean feature rows; absent classes hold a zero row."""

    mu: Tensor            # n_class x C
    present: np.ndarray   # n_class bools
    counts: np.ndarray    # n_class pixel counts

    @property
    def n_class(self):
        return self.mu.shape[0]

    @property
    def channels(self):
        return self.mu.shape[1]


def flatten_pair(x, field):
    """Flatten an H x W x C feature map with its label field.

    Returns (X_flat [HW x C], Y_flat [HW x n_class], sigma [HW]) where Y_flat
    rows are one-hot (all-zero when ignored) and sigma is 1 exactly at
    ignored rows. The label field must already be at feature resolution.
    """
    h, w, _ = x.shape
    if field.shape != (h, w):
        raise ShapeError(f"label field {field.shape} does not match feature map {(h, w)}")
    x_flat = x.reshape(h * w, x.shape[2])
    y_flat = one_hot(field.labels, field.n_class)
    sigma = (field.labels.reshape(-1) == IGNORE).astype(np.float64)
    return x_flat, Tensor(y_flat), Tensor(sigma)


def batch_centers(batch, grad_through=True):
    """Mean feature per class over a whole batch of (X_flat, Y_flat) pairs.

    mu[k] = sum over batch of Y^T X row k, divided by the pixel count of
    class k; zero row when the class is absent. Gradient flows into the
    features unless grad_through is False.
    """
    if not batch:
        raise ShapeError("batch_centers needs at least one image")
    total = None
    counts = None
    for x_flat, y_flat in batch:
        yt = y_flat.transpose((1, 0))
        s = yt @ x_flat
        total = s if total is None else total + s
        c = y_flat.data.sum(axis=0)
        counts = c if counts is None else counts + c
    inv = np.zeros_like(counts)
    np.divide(1.0, counts, out=inv, where=counts > 0)
    mu = total * inv[:, None]
    if not grad_through:
        mu = stop_gradient(mu)
    return ClassCenters(mu=mu, present=counts > 0, counts=counts.astype(int))


def distribute_centers(y_flat, centers):
    """Scatter each row's class center back to its pixel position."""
    return y_flat @ centers.mu

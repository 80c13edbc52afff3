"""The three class-aware regularization terms and their weighted combination.

All terms work on flattened feature maps and ground-truth-driven class
centers. Pixels marked ignore contribute to no value and no gradient;
absent classes are dropped from every pairwise term.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .centers import distribute_centers
from .tensor import Tensor, softmax, stop_gradient


@dataclass
class CarConfig:
    eps0: float = 0.5            # margin numerator, center-to-center
    eps1: float = 0.25           # margin numerator, center-to-pixel
    w_intra: float = 1.0
    w_c2c: float = 1.0
    w_c2p: float = 1.0
    grad_through_centers: bool = True
    # "active": average squared excesses over present classes / non-ignored
    # pixels only; "all": average over every row regardless.
    mse_reduction: str = "active"

    def __post_init__(self):
        if self.eps0 < 0 or self.eps1 < 0:
            raise ValueError("margins must be non-negative")
        if min(self.w_intra, self.w_c2c, self.w_c2p) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.mse_reduction not in ("active", "all"):
            raise ValueError(f"unknown mse_reduction {self.mse_reduction!r}")


class LossTerm(NamedTuple):
    value: Tensor
    vacuous: bool = False


def _zero():
    return Tensor(0.0)


def _maybe_detached(centers, cfg):
    return centers.mu if cfg.grad_through_centers else stop_gradient(centers.mu)


def intra_c2p_loss(x_flat, y_flat, sigma, centers, cfg):
    """Pull every pixel feature toward its own class center.

    Mean squared entry of (1 - sigma) * |Y mu - X| over non-ignored rows and
    all channels.
    """
    n_valid = int(np.sum(sigma.data == 0.0))
    if n_valid == 0:
        return LossTerm(_zero(), vacuous=True)
    mu = _maybe_detached(centers, cfg)
    target = y_flat @ mu
    keep = (1.0 - sigma.data)[:, None]
    diff = (target - x_flat).abs() * keep
    denom = n_valid if cfg.mse_reduction == "active" else x_flat.shape[0]
    return LossTerm((diff * diff).sum() * (1.0 / (denom * x_flat.shape[1])))


def inter_c2c_loss(centers, cfg):
    """Push softmax-normalized similarities between different centers under a margin.

    Similarities are the scaled dot products between present class centers,
    softmax-normalized per row; the diagonal is discarded, each row's excess
    over eps0/(n_class - 1) is summed, and the loss is the mean squared
    excess.
    """
    present = np.nonzero(centers.present)[0]
    if present.size < 2:
        return LossTerm(_zero(), vacuous=True)
    mu_all = _maybe_detached(centers, cfg)
    keep = np.zeros((centers.n_class, present.size))
    keep[present, np.arange(present.size)] = 1.0
    mu = Tensor(keep.T) @ mu_all  # present rows only
    c = centers.channels
    sim = softmax((mu @ mu.transpose((1, 0))) * (1.0 / np.sqrt(c)), axis=1)
    off = sim * (1.0 - np.eye(present.size))
    margin = cfg.eps0 / (centers.n_class - 1)
    excess = off.shifted_relu(margin).sum(axis=1)
    denom = present.size if cfg.mse_reduction == "active" else centers.n_class
    return LossTerm((excess * excess).sum() * (1.0 / denom))


def inter_c2p_loss(x_flat, y_flat, sigma, centers, cfg):
    """Push pixels away from centers of other classes.

    Center-to-pixel dot products, with each row's own-class entry replaced by
    that class's center self-product, are softmax-normalized across classes;
    off-class entries above eps1/(n_class - 1) are penalized, averaged over
    non-ignored pixels.
    """
    if centers.n_class < 2:
        return LossTerm(_zero())
    n_valid = int(np.sum(sigma.data == 0.0))
    if n_valid == 0:
        return LossTerm(_zero(), vacuous=True)
    present = np.nonzero(centers.present)[0]
    mu_all = _maybe_detached(centers, cfg)
    keep = np.zeros((centers.n_class, present.size))
    keep[present, np.arange(present.size)] = 1.0
    mu = Tensor(keep.T) @ mu_all                       # P x C
    y_sub = Tensor(y_flat.data[:, present])            # HW x P
    scores = x_flat @ mu.transpose((1, 0))             # HW x P, unscaled
    self_sim = (mu * mu).sum(axis=1).reshape(1, present.size)
    own = y_sub.data
    merged = scores * (1.0 - own) + y_sub * self_sim
    att = softmax(merged, axis=1)
    off = att * (1.0 - own)
    margin = cfg.eps1 / (centers.n_class - 1)
    excess = off.shifted_relu(margin).sum(axis=1)
    excess = excess * (1.0 - sigma.data)
    denom = n_valid if cfg.mse_reduction == "active" else x_flat.shape[0]
    return LossTerm((excess * excess).sum() * (1.0 / denom))


class CarTerms(NamedTuple):
    intra: LossTerm
    c2c: LossTerm
    c2p: LossTerm
    total: Tensor


def car_total(x_flat, y_flat, sigma, centers, cfg):
    """Weighted sum of the three terms, each also reported separately."""
    intra = intra_c2p_loss(x_flat, y_flat, sigma, centers, cfg)
    c2c = inter_c2c_loss(centers, cfg)
    c2p = inter_c2p_loss(x_flat, y_flat, sigma, centers, cfg)
    total = intra.value * cfg.w_intra + c2c.value * cfg.w_c2c + c2p.value * cfg.w_c2p
    return CarTerms(intra, c2c, c2p, total)

"""Synthetic biased dataset: textured shapes whose class pairings are
restricted at train time, with held-out pairings appearing only in the test
split. Images are written as binary PPM, labels as binary PGM with 255 set
on ignored pixels."""

import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import pnm
from .tensor import IGNORE

# base colors per class index; background is class 0
PALETTE = np.array([
    [0.42, 0.40, 0.36],   # background
    [0.78, 0.32, 0.30],   # class 1
    [0.30, 0.68, 0.36],   # class 2
    [0.72, 0.52, 0.26],   # class 3
    [0.30, 0.52, 0.68],   # class 4
    [0.62, 0.34, 0.64],   # class 5
    [0.70, 0.66, 0.30],   # class 6
    [0.36, 0.64, 0.60],   # class 7
])


class InfeasibleSpec(ValueError):
    pass


@dataclass
class BiasSpec:
    n_class: int = 5
    train_pairs: tuple = ((1, 2), (3, 4))
    holdout_pairs: tuple = ((1, 3), (2, 4))
    shape_kinds: tuple = ("rect", "disc")
    noise_std: float = 0.08
    image_size: int = 64
    shape_frac: float = 0.12
    ignore_border: int = 2
    train_count: int = 48
    test_count: int = 24

    def __post_init__(self):
        self.train_pairs = tuple(tuple(sorted(p)) for p in self.train_pairs)
        self.holdout_pairs = tuple(tuple(sorted(p)) for p in self.holdout_pairs)
        if set(self.train_pairs) & set(self.holdout_pairs):
            raise InfeasibleSpec("held-out pairs overlap the train pairs")
        for a, b in self.train_pairs + self.holdout_pairs:
            if not (1 <= a < self.n_class and 1 <= b < self.n_class) or a == b:
                raise InfeasibleSpec(f"bad class pair ({a}, {b}) for n_class={self.n_class}")
        if self.n_class > len(PALETTE):
            raise InfeasibleSpec(f"at most {len(PALETTE) - 1} foreground classes supported")
        if not self.train_pairs:
            raise InfeasibleSpec("no train pairs")
        usable = self.image_size - 2 * self.ignore_border
        if 2 * self.shape_frac * self.image_size ** 2 > 0.55 * usable ** 2:
            raise InfeasibleSpec("shapes too large to place without overlap")
        for k in {c for p in self.holdout_pairs for c in p}:
            if not any(k in p for p in self.train_pairs):
                raise InfeasibleSpec(f"class {k} never appears in a train pair")


class Sample(NamedTuple):
    image: np.ndarray    # H x W x 3 uint8
    labels: np.ndarray   # H x W uint8, 255 = ignore
    pair: tuple
    source: str          # "train_pair" or "holdout_pair"

    def image_float(self):
        return self.image.astype(np.float64) / 255.0


def _class_texture(k, h, w, rng, noise_std):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = PALETTE[k].copy()
    if k == 0:
        pattern = 0.06 * np.sin(2 * np.pi * (xx / 23.0 + 0.4 * np.sin(yy / 11.0)))
    else:
        angle = (k * 50.0) * np.pi / 180.0
        freq = 0.14 + 0.03 * (k % 3)
        pattern = 0.10 * np.sin(2 * np.pi * freq * (xx * np.cos(angle) + yy * np.sin(angle)))
    tex = base[None, None, :] + pattern[:, :, None]
    tex = tex + rng.normal(0.0, noise_std, size=(h, w, 3))
    return np.clip(tex, 0.0, 1.0)


def _shape_mask(kind, h, w, area, border, rng):
    """Boolean mask of one shape, fully inside the non-ignored region."""
    if kind == "rect":
        aspect = rng.uniform(0.7, 1.4)
        sh = max(3, int(round(np.sqrt(area * aspect))))
        sw = max(3, int(round(area / sh)))
        lo, hi_r, hi_c = border + 1, h - border - 1 - sh, w - border - 1 - sw
        if hi_r < lo or hi_c < lo:
            raise InfeasibleSpec("rectangle does not fit inside the usable area")
        r0 = int(rng.integers(lo, hi_r + 1))
        c0 = int(rng.integers(lo, hi_c + 1))
        mask = np.zeros((h, w), dtype=bool)
        mask[r0:r0 + sh, c0:c0 + sw] = True
        return mask
    if kind == "disc":
        rad = np.sqrt(area / np.pi)
        lo = border + 1 + rad
        hi_r, hi_c = h - border - 2 - rad, w - border - 2 - rad
        if hi_r < lo or hi_c < lo:
            raise InfeasibleSpec("disc does not fit inside the usable area")
        cy = rng.uniform(lo, hi_r)
        cx = rng.uniform(lo, hi_c)
        yy, xx = np.mgrid[0:h, 0:w]
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= rad ** 2
    raise InfeasibleSpec(f"unknown shape kind {kind!r}")


def _kind_for(spec, k):
    return spec.shape_kinds[(k - 1) % len(spec.shape_kinds)]


def render_sample(spec, pair, source, rng):
    h = w = spec.image_size
    area = spec.shape_frac * h * w
    img = _class_texture(0, h, w, rng, spec.noise_std)
    labels = np.zeros((h, w), dtype=np.uint8)
    masks = []
    for _ in range(500):
        masks = [_shape_mask(_kind_for(spec, k), h, w, area, spec.ignore_border, rng)
                 for k in pair]
        if not (masks[0] & masks[1]).any():
            break
    else:
        raise InfeasibleSpec("could not place non-overlapping shapes")
    for k, mask in zip(pair, masks):
        img[mask] = _class_texture(k, h, w, rng, spec.noise_std)[mask]
        labels[mask] = k
    b = spec.ignore_border
    if b:
        labels[:b, :] = IGNORE
        labels[-b:, :] = IGNORE
        labels[:, :b] = IGNORE
        labels[:, -b:] = IGNORE
    image = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return Sample(image, labels, tuple(pair), source)


def generate_split(spec, seed, split):
    """Deterministic sample list; the test split alternates held-out and
    seen pairings so both can be scored separately."""
    samples = []
    if split == "train":
        for i in range(spec.train_count):
            pair = spec.train_pairs[i % len(spec.train_pairs)]
            rng = np.random.default_rng([seed, 0, i])
            samples.append(render_sample(spec, pair, "train_pair", rng))
    elif split == "test":
        for i in range(spec.test_count):
            if i % 2 == 0:
                pair, source = spec.holdout_pairs[(i // 2) % len(spec.holdout_pairs)], "holdout_pair"
            else:
                pair, source = spec.train_pairs[(i // 2) % len(spec.train_pairs)], "train_pair"
            rng = np.random.default_rng([seed, 1, i])
            samples.append(render_sample(spec, pair, source, rng))
    else:
        raise ValueError(f"unknown split {split!r}")
    return samples


def write_split(samples, split_dir):
    os.makedirs(split_dir, exist_ok=True)
    lines = ["index,image,label,class_a,class_b,source"]
    for i, s in enumerate(samples):
        img_name, lab_name = f"img_{i:04d}.ppm", f"lab_{i:04d}.pgm"
        pnm.write_ppm(os.path.join(split_dir, img_name), s.image)
        pnm.write_pgm(os.path.join(split_dir, lab_name), s.labels)
        lines.append(f"{i},{img_name},{lab_name},{s.pair[0]},{s.pair[1]},{s.source}")
    with open(os.path.join(split_dir, "manifest.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_split(split_dir):
    with open(os.path.join(split_dir, "manifest.csv"), encoding="utf-8") as fh:
        rows = fh.read().strip().splitlines()[1:]
    samples = []
    for row in rows:
        _, img_name, lab_name, a, b, source = row.split(",")
        image = pnm.read_ppm(os.path.join(split_dir, img_name))
        labels = pnm.read_pgm(os.path.join(split_dir, lab_name))
        samples.append(Sample(image, labels, (int(a), int(b)), source))
    return samples


def gen_dataset(spec, seed, out_dir):
    """Generate and write both splits; returns the split directories."""
    dirs = {}
    for split in ("train", "test"):
        samples = generate_split(spec, seed, split)
        d = os.path.join(out_dir, split)
        write_split(samples, d)
        dirs[split] = d
    return dirs

"""End-to-end runs on the biased synthetic dataset: train, score both kinds
of test pairing, and measure how entangled the class centers are."""

import os

import numpy as np

from . import data, metrics, report
from .centers import LabelField
from .model import SegModel, SgdOptimizer, config_digest, poly_lr, save_checkpoint, train_step
from .tensor import Tensor


def load_or_generate(exp, seed, data_root=None):
    spec = exp.bias_spec()
    if data_root:
        return (data.load_split(os.path.join(data_root, "train")),
                data.load_split(os.path.join(data_root, "test")))
    return (data.generate_split(spec, seed, "train"),
            data.generate_split(spec, seed, "test"))


def build_model(exp, seed):
    return SegModel(exp.model_config(), np.random.default_rng([seed, 2]))


def train_model(exp, seed, train_samples, progress=None):
    """Train a fresh model; returns (model, loss rows)."""
    model = build_model(exp, seed)
    car_cfg = exp.car_config()
    opt = SgdOptimizer(model.params(), momentum=exp.momentum, weight_decay=exp.weight_decay)
    batch_rng = np.random.default_rng([seed, 3])
    n_class = exp.n_class
    rows = []
    for it in range(exp.iters):
        picks = batch_rng.integers(0, len(train_samples), size=exp.batch_size)
        batch = [(Tensor(train_samples[i].image_float()),
                  LabelField(train_samples[i].labels, n_class)) for i in picks]
        lr = poly_lr(exp.base_lr, it, exp.iters, exp.poly_power)
        m = train_step(batch, model, car_cfg, opt, lr)
        rows.append({"iter": it, "lr": lr, **m})
        if progress and (it % 50 == 0 or it == exp.iters - 1):
            progress(f"iter {it:4d}  lr {lr:.5f}  ce {m['ce']:.4f}  total {m['total']:.4f}")
    return model, rows


def score_model(model, test_samples):
    """mIOU on held-out and seen pairings plus center-dependency summary."""
    holdout = [s for s in test_samples if s.source == "holdout_pair"]
    seen = [s for s in test_samples if s.source == "train_pair"]
    rep = report.RunReport()
    if seen:
        rep.miou_train_pairs = metrics.eval_miou(model, seen).mean
    if holdout:
        rep.miou_holdout_pairs = metrics.eval_miou(model, holdout).mean
    matrix, present, mean_off = metrics.class_dependency_map(model, test_samples)
    rep.mean_offdiag_dependency = mean_off
    return rep, matrix, present


def run_training(exp, seed, out_dir=None, data_root=None, progress=None):
    """Full train + evaluate pass; writes artifacts when out_dir is given."""
    train_samples, test_samples = load_or_generate(exp, seed, data_root)
    model, rows = train_model(exp, seed, train_samples, progress)
    rep, matrix, present = score_model(model, test_samples)
    rep.loss_rows = rows
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        dep_csv = os.path.join(out_dir, "class_dependency.csv")
        report.write_matrix_csv(dep_csv, matrix)
        report.write_heatmap_pgm(os.path.join(out_dir, "class_dependency.pgm"), matrix)
        report.render_heatmap_png(os.path.join(out_dir, "class_dependency.png"), matrix,
                                  title="class dependency",
                                  tick_labels=[str(i) for i in range(matrix.shape[0])])
        rep.artifacts += [dep_csv, dep_csv.replace(".csv", ".pgm"), dep_csv.replace(".csv", ".png")]
        ckpt = os.path.join(out_dir, "checkpoint.bin")
        save_checkpoint(ckpt, model.params(), config_digest(exp.canonical_text()))
        rep.artifacts.append(ckpt)
        report.write_run_artifacts(out_dir, rep)
    return model, rep


def run_bias_experiment(exp_on, exp_off, seeds, progress=None):
    """Train with and without regularization per seed on identical data."""
    results = []
    for seed in seeds:
        row = {"seed": seed}
        for tag, exp in (("car", exp_on), ("base", exp_off)):
            _, rep = run_training(exp, seed, progress=progress)
            row[f"{tag}_miou_holdout"] = rep.miou_holdout_pairs
            row[f"{tag}_miou_seen"] = rep.miou_train_pairs
            row[f"{tag}_offdiag"] = rep.mean_offdiag_dependency
            if progress:
                progress(f"seed {seed} {tag}: holdout {rep.miou_holdout_pairs:.4f} "
                         f"seen {rep.miou_train_pairs:.4f} offdiag {rep.mean_offdiag_dependency:.4f}")
        results.append(row)
    return results

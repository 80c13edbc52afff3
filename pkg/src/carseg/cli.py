"""Command line front end.

Exit codes: 0 success, 2 config/usage error, 3 numeric failure.
"""

import argparse
import os
import sys

import numpy as np

from . import data, gradcheck, metrics, report
from .attention import attention_flops
from .config import ConfigError, build_experiment, load_config
from .experiment import run_training
from .model import SegModel, load_checkpoint
from .tensor import NumericError, ShapeError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _build_parser():
    p = argparse.ArgumentParser(prog="carseg",
                                description="Train and probe a toy segmentation model "
                                            "with class-aware feature regularization.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required,
                        help="line-oriented key=value experiment file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="out", help="artifact directory")

    sp = sub.add_parser("gen-data", help="write the synthetic biased dataset")
    common(sp)

    sp = sub.add_parser("train", help="train and evaluate one model")
    common(sp)
    sp.add_argument("--car", choices=["on", "off"], help="override the config's regularization switch")
    sp.add_argument("--upsampler", choices=["ejpu", "dilated"], help="override the decoder mode")
    sp.add_argument("--data", help="dataset root from gen-data (default: generate in memory)")

    sp = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True, help="split directory (train/ or test/)")

    sp = sub.add_parser("maps", help="emit dependency and pixel-relation heatmaps")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True, help="split directory")
    sp.add_argument("--image", type=int, default=0, help="sample index for the relation map")
    sp.add_argument("--pixel", default=None, help="row,col in feature coordinates")

    sp = sub.add_parser("flops", help="attention multiply counts, axial vs dense")
    sp.add_argument("--h", type=int, required=True)
    sp.add_argument("--w", type=int, required=True)
    sp.add_argument("--c", type=int, required=True)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every operation")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--seeds", type=int, default=gradcheck.DEFAULT_SEEDS,
                    help="number of random draws per operation")
    return p


def _experiment(args, overrides=None):
    return build_experiment(load_config(args.config), overrides)


def _load_model(args, exp):
    model = SegModel(exp.model_config(), np.random.default_rng([args.seed, 2]))
    table, _ = load_checkpoint(args.ckpt)
    model.load_state(table)
    return model


def cmd_gen_data(args):
    exp = _experiment(args)
    dirs = data.gen_dataset(exp.bias_spec(), args.seed, args.out)
    for split, d in dirs.items():
        print(f"{split}: {d}")
    return EXIT_OK


def cmd_train(args):
    overrides = {}
    if args.car is not None:
        overrides["car"] = args.car == "on"
    if args.upsampler is not None:
        overrides["upsampler"] = args.upsampler
    exp = _experiment(args, overrides)
    _, rep = run_training(exp, args.seed, out_dir=args.out, data_root=args.data,
                          progress=print)
    print(f"miou_holdout_pairs = {rep.miou_holdout_pairs!r}")
    print(f"miou_train_pairs = {rep.miou_train_pairs!r}")
    print(f"mean_offdiag_dependency = {rep.mean_offdiag_dependency!r}")
    return EXIT_OK


def cmd_eval(args):
    exp = _experiment(args)
    model = _load_model(args, exp)
    samples = data.load_split(args.data)
    iou = metrics.eval_miou(model, samples)
    os.makedirs(args.out, exist_ok=True)
    rows = [[k, float(v)] for k, v in enumerate(iou.per_class)]
    report.write_csv(os.path.join(args.out, "iou.csv"), ["class", "iou"], rows)
    report.write_kv(os.path.join(args.out, "eval_summary.txt"),
                    {"miou": iou.mean, "samples": len(samples)})
    print(f"miou = {iou.mean!r}")
    return EXIT_OK


def cmd_maps(args):
    exp = _experiment(args)
    model = _load_model(args, exp)
    samples = data.load_split(args.data)
    os.makedirs(args.out, exist_ok=True)
    matrix, _, mean_off = metrics.class_dependency_map(model, samples)
    report.write_matrix_csv(os.path.join(args.out, "class_dependency.csv"), matrix)
    report.write_heatmap_pgm(os.path.join(args.out, "class_dependency.pgm"), matrix)
    report.render_heatmap_png(os.path.join(args.out, "class_dependency.png"), matrix,
                              title="class dependency",
                              tick_labels=[str(i) for i in range(matrix.shape[0])])

    sample = samples[args.image]
    feat_hw = (exp.image_size // 8, exp.image_size // 8)
    if args.pixel is None:
        pixel = (feat_hw[0] // 2, feat_hw[1] // 2)
    else:
        r, _, c = args.pixel.partition(",")
        pixel = (int(r), int(c))
    raw, norm = metrics.pixel_relation_map(model, sample.image_float(), pixel)
    stem = f"pixel_relation_{args.image}_{pixel[0]}_{pixel[1]}"
    report.write_matrix_csv(os.path.join(args.out, stem + ".csv"), raw)
    report.write_heatmap_pgm(os.path.join(args.out, stem + ".pgm"), norm)
    report.render_heatmap_png(os.path.join(args.out, stem + ".png"), norm,
                              title=f"relation to {pixel}")
    print(f"mean_offdiag_dependency = {mean_off!r}")
    print(f"artifacts: {args.out}")
    return EXIT_OK


def cmd_flops(args):
    dense = attention_flops(args.h, args.w, args.c, "dense")
    saa = attention_flops(args.h, args.w, args.c, "saa")
    ratio = saa.core / dense.core
    print(f"dense_core = {dense.core}")
    print(f"saa_core = {saa.core}")
    print(f"projection = {dense.projection}")
    print(f"saa_dense_ratio = {ratio!r}")
    return EXIT_OK


def cmd_gradcheck(args):
    # --seed offsets the seed range so reruns can draw fresh samples
    rows, ok, elapsed = gradcheck.run_suite(seeds=range(args.seed, args.seed + args.seeds))
    for name, err, passed in rows:
        print(f"{name:28s} max_rel_err={err:.3e} {'PASS' if passed else 'FAIL'}")
    print(f"{'all passed' if ok else 'FAILURES'} in {elapsed:.1f}s")
    return EXIT_OK if ok else EXIT_NUMERIC


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    handlers = {
        "gen-data": cmd_gen_data,
        "train": cmd_train,
        "eval": cmd_eval,
        "maps": cmd_maps,
        "flops": cmd_flops,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ShapeError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

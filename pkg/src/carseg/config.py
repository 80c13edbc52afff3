"""Line-oriented `key = value` config files and their typed view.

Unknown keys are rejected so typos fail fast; every key has a default, so an
empty file is a valid experiment."""

from dataclasses import dataclass

from .data import BiasSpec, InfeasibleSpec
from .losses import CarConfig
from .model import ModelConfig


class ConfigError(ValueError):
    pass


def parse_config_text(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e


def _parse_pairs(text):
    # "1-2,3-4" -> ((1, 2), (3, 4))
    pairs = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        a, _, b = chunk.partition("-")
        pairs.append((int(a), int(b)))
    return tuple(pairs)


def _parse_ints(text):
    return tuple(int(v) for v in text.split(","))


def _parse_strs(text):
    return tuple(v.strip() for v in text.split(","))


def _parse_bool(text):
    if text in ("on", "true", "1", "yes"):
        return True
    if text in ("off", "false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


SCHEMA = {
    # dataset
    "n_class": (int, 5),
    "image_size": (int, 64),
    "train_pairs": (_parse_pairs, ((1, 2), (3, 4))),
    "holdout_pairs": (_parse_pairs, ((1, 3), (2, 4))),
    "shape_kinds": (_parse_strs, ("rect", "disc")),
    "noise_std": (float, 0.08),
    "shape_frac": (float, 0.12),
    "ignore_border": (int, 2),
    "train_count": (int, 48),
    "test_count": (int, 24),
    # model
    "stage_channels": (_parse_ints, (16, 32, 64, 64)),
    "decoder_width": (int, 16),
    "decoder_channels": (int, 64),
    "heads": (int, 4),
    "upsampler": (str, "ejpu"),
    "ce_full_res": (_parse_bool, True),
    # optimization
    "iters": (int, 200),
    "batch_size": (int, 4),
    "base_lr": (float, 0.01),
    "momentum": (float, 0.9),
    "weight_decay": (float, 1e-3),
    "poly_power": (float, 0.9),
    # regularization
    "car": (_parse_bool, True),
    "eps0": (float, 0.5),
    "eps1": (float, 0.25),
    "w_intra": (float, 1.0),
    "w_c2c": (float, 1.0),
    "w_c2p": (float, 1.0),
    "grad_through_centers": (_parse_bool, True),
    "mse_reduction": (str, "active"),
}


@dataclass
class Experiment:
    values: dict

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key)

    def bias_spec(self):
        v = self.values
        try:
            return BiasSpec(
                n_class=v["n_class"], train_pairs=v["train_pairs"],
                holdout_pairs=v["holdout_pairs"], shape_kinds=v["shape_kinds"],
                noise_std=v["noise_std"], image_size=v["image_size"],
                shape_frac=v["shape_frac"], ignore_border=v["ignore_border"],
                train_count=v["train_count"], test_count=v["test_count"])
        except InfeasibleSpec as e:
            raise ConfigError(str(e)) from e

    def model_config(self):
        v = self.values
        try:
            return ModelConfig(
                stage_channels=v["stage_channels"], decoder_width=v["decoder_width"],
                decoder_channels=v["decoder_channels"], heads=v["heads"],
                n_class=v["n_class"], upsampler=v["upsampler"],
                ce_full_res=v["ce_full_res"])
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def car_config(self):
        if not self.values["car"]:
            return None
        v = self.values
        try:
            return CarConfig(
                eps0=v["eps0"], eps1=v["eps1"], w_intra=v["w_intra"],
                w_c2c=v["w_c2c"], w_c2p=v["w_c2p"],
                grad_through_centers=v["grad_through_centers"],
                mse_reduction=v["mse_reduction"])
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def canonical_text(self):
        return "\n".join(f"{k} = {_fmt(v)}" for k, v in sorted(self.values.items())) + "\n"


def _fmt(v):
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ",".join(f"{a}-{b}" for a, b in v)
        return ",".join(str(x) for x in v)
    if isinstance(v, bool):
        return "on" if v else "off"
    return repr(v) if isinstance(v, float) else str(v)


def build_experiment(raw, overrides=None):
    """Typed experiment from raw string config plus CLI overrides."""
    values = {}
    for key, (parse, default) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = parse(raw[key])
            except (ValueError, TypeError) as e:
                raise ConfigError(f"bad value for {key!r}: {raw[key]!r} ({e})") from e
        else:
            values[key] = default
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    exp = Experiment(values)
    exp.bias_spec()
    exp.model_config()
    exp.car_config()
    return exp

"""INI experiment configuration.

Every section maps onto one module's config object; keys not listed in
:data:`DEFAULTS` are rejected so typos fail loudly.
"""
import configparser
import hashlib
import json

from .balancing import BalanceConfig
from .datasets import SynthConfig
from .errors import ConfigError
from .morphology import make_se
from .nn.model import ModelConfig
from .nn.train import OptimizerConfig
from .preprocess import PreprocessConfig

DEFAULTS = {
    "global": {"seed": "0"},
    "dataset": {"kind": "synthetic", "root": "data/synthetic", "train_split": "train",
                "test_split": "test"},
    "preprocess": {"gcn_epsilon": "1e-8", "clahe_tiles": "8,8", "clahe_clip": "2.0",
                   "clahe_bins": "256", "gamma": "0.8"},
    "segregate": {"se_shape": "box", "se_radius": "1"},
    "balance": {"level": "2", "v": "0.05", "rho": "0.9", "r": "1.0", "thick_rule": "thin",
                "max_patches": "0", "pad_mode": "reflect"},
    "model": {"base_filters": "16", "conv_blocks": "3", "kernel": "3", "fc_sizes": "128,64",
              "dropout": "0.25", "dtype": "float32", "bn_momentum": "0.9"},
    "train": {"epochs": "80", "batch_size": "64", "lr": "1e-3", "beta1": "0.9",
              "beta2": "0.999", "val_fraction": "0.1", "bn_batches": "32"},
    "eval": {"threshold": "0.5", "roi": "full", "erosion_passes": "1", "post_se_shape": "cross",
             "post_se_radius": "1", "batch_size": "256", "output_dir": "out",
             "write_timings": "false"},
    "synth": {"train_count": "20", "test_count": "10", "height": "128", "width": "128",
              "n_thin": "8", "n_thick": "4", "noise": "0.06", "thin_contrast": "0.22",
              "thick_contrast": "0.3"},
}
LEVELS = ("none", "1", "2")
ROI_MODES = ("full", "fov")


def _ints(text):
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


class ExperimentConfig:
    """Parsed, typed view of the INI file plus command-line overrides."""

    def __init__(self, raw):
        self.raw = raw
        try:
            self._parse()
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{self._field}: {exc}") from exc

    def _get(self, section, key, conv=str):
        self._field = f"{section}.{key}"
        return conv(self.raw[section][key])

    def _bool(self, section, key):
        self._field = f"{section}.{key}"
        value = self.raw[section][key].strip().lower()
        if value not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"{section}.{key} must be true or false")
        return value in ("true", "1", "yes")

    def _parse(self):
        g = self._get
        self.seed = g("global", "seed", int)
        self.dataset_kind = g("dataset", "kind")
        self.dataset_root = g("dataset", "root")
        self.train_split = g("dataset", "train_split")
        self.test_split = g("dataset", "test_split")
        self.preprocess = PreprocessConfig(
            g("preprocess", "gcn_epsilon", float), g("preprocess", "clahe_tiles", _ints),
            g("preprocess", "clahe_clip", float), g("preprocess", "clahe_bins", int),
            g("preprocess", "gamma", float))
        self.seg_se = (g("segregate", "se_shape"), g("segregate", "se_radius", int))
        self.level = g("balance", "level")
        self.balance = BalanceConfig(g("balance", "v", float), g("balance", "rho", float),
                                     g("balance", "r", float), self.seed,
                                     g("balance", "thick_rule"),
                                     g("balance", "max_patches", int))
        self.pad_mode = g("balance", "pad_mode")
        self.model = ModelConfig(
            base_filters=g("model", "base_filters", int), conv_blocks=g("model", "conv_blocks", int),
            kernel=g("model", "kernel", int), fc_sizes=g("model", "fc_sizes", _ints),
            dropout=g("model", "dropout", float), seed=self.seed, dtype=g("model", "dtype"),
            bn_momentum=g("model", "bn_momentum", float))
        self.epochs = g("train", "epochs", int)
        self.batch_size = g("train", "batch_size", int)
        self.optim = OptimizerConfig(g("train", "lr", float), g("train", "beta1", float),
                                     g("train", "beta2", float))
        self.val_fraction = g("train", "val_fraction", float)
        self.bn_batches = g("train", "bn_batches", int)
        self.threshold = g("eval", "threshold", float)
        self.roi = g("eval", "roi")
        self.erosion_passes = g("eval", "erosion_passes", int)
        self.post_se = (g("eval", "post_se_shape"), g("eval", "post_se_radius", int))
        self.eval_batch = g("eval", "batch_size", int)
        self.out = g("eval", "output_dir")
        self.write_timings = self._bool("eval", "write_timings")
        self.synth_counts = (g("synth", "train_count", int), g("synth", "test_count", int))
        self.synth = SynthConfig(height=g("synth", "height", int), width=g("synth", "width", int),
                                 n_thin=g("synth", "n_thin", int),
                                 n_thick=g("synth", "n_thick", int),
                                 noise=g("synth", "noise", float),
                                 thin_contrast=g("synth", "thin_contrast", float),
                                 thick_contrast=g("synth", "thick_contrast", float))

    def validate(self):
        checks = (
            (self.dataset_kind in ("synthetic", "drive", "stare"), "dataset.kind",
             "must be synthetic, drive or stare"),
            (self.level in LEVELS, "balance.level", f"must be one of {LEVELS}"),
            (self.pad_mode in ("reflect", "zero"), "balance.pad_mode", "must be reflect or zero"),
            (self.epochs >= 0, "train.epochs", "must be >= 0"),
            (self.batch_size >= 1, "train.batch_size", "must be >= 1"),
            (0 <= self.val_fraction < 1, "train.val_fraction", "must be in [0, 1)"),
            (self.bn_batches >= 0, "train.bn_batches", "must be >= 0"),
            (0 < self.threshold < 1, "eval.threshold", "must be in (0, 1)"),
            (self.roi in ROI_MODES, "eval.roi", f"must be one of {ROI_MODES}"),
            (self.erosion_passes >= 0, "eval.erosion_passes", "must be >= 0"),
            (self.eval_batch >= 1, "eval.batch_size", "must be >= 1"),
            (min(self.synth_counts) >= 1, "synth.*_count", "must be >= 1"),
        )
        for ok, name, msg in checks:
            if not ok:
                raise ConfigError(f"{name} {msg}")
        self.preprocess.validate()
        self.balance.validate()
        self.model.validate()
        self.optim.validate()
        self.synth.validate()
        make_se(*self.seg_se)
        make_se(*self.post_se)
        return self

    def segregation_se(self):
        return make_se(*self.seg_se)

    def postprocess_se(self):
        return make_se(*self.post_se)

    def to_dict(self):
        return {s: dict(self.raw[s]) for s in DEFAULTS}

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def to_ini(self):
        lines = []
        for section, values in self.to_dict().items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in values.items()]
            lines.append("")
        return "\n".join(lines)


def load_config(path=None, overrides=None):
    """Defaults, then ``path`` (if any), then ``overrides`` ``{"section.key": value}``."""
    raw = {s: dict(v) for s, v in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in parser.sections():
            if section not in raw:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in raw[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                raw[section][key] = value
    for name, value in (overrides or {}).items():
        section, key = name.split(".", 1)
        if section not in raw or key not in raw[section]:
            raise ConfigError(f"unknown config key {name}")
        raw[section][key] = str(value)
    return ExperimentConfig(raw).validate()

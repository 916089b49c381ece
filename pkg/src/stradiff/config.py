"""Flat run configuration: INI files with sections, CLI overrides, env seed.

Precedence, highest first: command-line flag, ``STRADIFF_SEED`` (seed only),
config file, built-in default.
"""

import configparser
import dataclasses
import os
from io import StringIO
from dataclasses import dataclass, fields
from pathlib import Path

from .datagen import ExperimentSpec
from .objective import TrainConfig

SEED_ENV = "STRADIFF_SEED"

# section of the INI file each key lives in
SECTIONS = {
    "run": ["seed"],
    "experiment": ["T", "n", "m", "mixing_kind", "noise_std"],
    "train": ["lambda_prior", "lambda_diff", "lambda_kl", "nu_y", "epochs", "L",
              "beta_min", "beta_max", "eps_num", "lr", "beta1", "beta2", "adam_eps",
              "hidden", "mix_hidden", "train_mixing", "log_sigma_init", "snapshot_epochs"],
    "gp": ["sigma_f2", "xi", "ell_init", "gamma_jitter"],
    "estimate": ["R", "batch_size"],
    "output": ["out_dir"],
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    T: int = 1000
    n: int = 3
    m: int = 3
    mixing_kind: str = "linear"
    noise_std: float = 0.0
    lambda_prior: float = 0.1
    lambda_diff: float = 1.0
    lambda_kl: float = 0.01
    nu_y: float = 1.0
    epochs: int = 10000
    L: int = 20
    beta_min: float = None
    beta_max: float = None
    eps_num: float = 1e-8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: int = 128
    mix_hidden: int = 64
    train_mixing: bool = True
    log_sigma_init: float = 0.0
    snapshot_epochs: tuple = (0, 3000, -1)
    sigma_f2: float = 1.0
    xi: float = 1e-4
    ell_init: float = 0.1
    gamma_jitter: float = 0.01
    R: int = 100
    batch_size: int = None
    out_dir: str = "."

    def experiment_spec(self):
        return ExperimentSpec(T=self.T, n=self.n, m=self.m, mixing_kind=self.mixing_kind,
                              noise_std=self.noise_std, seed=self.seed)

    def train_config(self):
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def to_ini(self):
        """Render as INI text that :func:`load_config` reads back unchanged."""
        cp = configparser.ConfigParser()
        cp.optionxform = str
        values = dataclasses.asdict(self)
        for section, keys in SECTIONS.items():
            cp[section] = {k: format_value(values[k]) for k in keys}
        buf = StringIO()
        cp.write(buf)
        return buf.getvalue()


FIELD_TYPES = {f.name: f for f in fields(RunConfig)}
assert sorted(FIELD_TYPES) == sorted(k for keys in SECTIONS.values() for k in keys)

_OPTIONAL = {"beta_min", "beta_max", "batch_size"}


def format_value(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(key, text):
    """Convert the string form of ``key`` to its field type."""
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    text = str(text).strip()
    if key in _OPTIONAL and text.lower() in ("", "none", "default"):
        return None
    kind = FIELD_TYPES[key].type
    try:
        if key == "snapshot_epochs":
            return tuple(int(v) for v in text.replace(",", " ").split())
        if kind is bool or kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if key in ("beta_min", "beta_max") or kind is float or kind == "float":
            return float(text)
        if kind is int or kind == "int" or key == "batch_size":
            return int(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def read_ini(path):
    """Key/value pairs from an INI file, checked against the known keys."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    out = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}] in {path}")
        for key, text in cp[section].items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"key {key!r} does not belong in [{section}]")
            out[key] = parse_value(key, text)
    return out


def load_config(path=None, overrides=None, env=None):
    """Build a :class:`RunConfig` from defaults, file, env seed and overrides.

    ``overrides`` maps keys to strings or typed values (typically parsed
    command-line flags); ``env`` defaults to ``os.environ``.
    """
    env = os.environ if env is None else env
    values = {}
    if path is not None:
        values.update(read_ini(path))
    if env.get(SEED_ENV, "").strip():
        values["seed"] = parse_value("seed", env[SEED_ENV])
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        values[key] = parse_value(key, val) if isinstance(val, str) else val
    cfg = RunConfig(**values)
    try:
        cfg.experiment_spec()
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.R < 2:
        raise ConfigError(f"R must be at least 2, got {cfg.R}")
    return cfg


def shipped_config(name):
    """Path of a config file bundled with the package (``linear``, ``nonlinear``...)."""
    path = Path(__file__).parent / "configs" / f"{name}.ini"
    if not path.is_file():
        raise ConfigError(f"no shipped config named {name!r}")
    return path

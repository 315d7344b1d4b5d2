"""Experiment configuration and its ``key = value`` text format.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Every key is optional; unknown or repeated keys are errors reported with
their line number.  See :data:`KEYS` for the accepted keys; list-valued
keys take comma-separated values.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .datagen import KINDS, DomainSpec
from .nn import default_architecture
from .pipeline import TrainConfig, default_n_r
from .reference import CorrectionConfig

PROCEDURES = ("tr", "tr_ref", "ft", "ft_ref", "ft_wo_tr", "eub")
DEFAULT_PROCEDURES = ("tr", "tr_ref", "ft", "ft_ref", "ft_wo_tr")
ABLATION_KINDS = ("n", "epsilon", "layers")
DEFAULT_GRIDS = {"n": (0, 1, 5, 10), "epsilon": (-1.0, 0.0, 0.5, 1.0), "layers": (0, 1, 2, 3)}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # setting
    setting: str | None = None
    source_kind: str = "natural_like"
    target_kind: str = "webpage_like"
    source_mixing_seed: int = 14
    target_mixing_seed: int = 24
    source_size: int = 200
    target_size: int = 30
    eval_size: int = 20
    height: int = 32
    width: int = 32
    channels: int = 3
    n_fix: int = 20
    sigma: float = 1.5
    noise: float = 0.1
    data_seed: int | None = None
    source_data: str | None = None
    target_data: str | None = None
    # model
    hidden: int = 16
    head_layers: int = 1
    # protocol
    n: int = 10
    n_r: int | None = None
    procedures: tuple = DEFAULT_PROCEDURES
    repeats: int = 10
    base_seed: int = 0
    # correction
    epsilon: float = 0.0
    lam: float = 1e-3
    inner_steps: int = 5
    inner_step_size: float = 0.1
    backtracking_halvings: int = 20
    # optimizer
    lr: float = 5e-5
    weight_decay: float = 1e-4
    batch_size: int = 10
    epochs: int = 10
    ft_epochs: int | None = None
    lr_decay: float = 0.2
    decay_every: int = 3
    val_fraction: float = 0.1
    loss_gradient: str = "through_max"
    # outputs and sweeps
    output: str | None = None
    checkpoint_dir: str | None = None
    grid: tuple | None = None
    train_procedure: str = "ft_ref"

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.n < 0:
            raise ValueError("n must be non-negative")
        if self.n_r is not None and self.n_r < 1:
            raise ValueError("n_r must be positive")
        for kind in (self.source_kind, self.target_kind):
            if kind not in KINDS:
                raise ValueError(f"unknown domain kind {kind!r}; expected one of {KINDS}")
        bad = [p for p in self.procedures if p not in PROCEDURES]
        if bad or not self.procedures:
            raise ValueError(f"procedures must be a non-empty subset of {PROCEDURES}, got {bad}")
        if self.train_procedure not in PROCEDURES[:-1]:
            raise ValueError(f"train_procedure must be one of {PROCEDURES[:-1]}")
        if not 0 < self.eval_size < self.target_size:
            raise ValueError("eval_size must leave a non-empty reference pool")
        if self.n > self.pool_size:
            raise ValueError(f"n = {self.n} exceeds the reference pool of {self.pool_size}")
        if self.hidden < 1 or self.head_layers < 0:
            raise ValueError("hidden must be positive and head_layers non-negative")
        # build the sub-configs once so their own checks run here
        self.train_config()

    @property
    def pool_size(self):
        return self.target_size - self.eval_size

    @property
    def label(self):
        return self.setting or f"{self.source_kind}:small-conv:{self.target_kind}"

    @property
    def resolved_n_r(self):
        """References drawn per iteration, or None when n = 0."""
        if self.n_r is not None:
            return self.n_r
        return default_n_r(self.n) if self.n > 0 else None

    @property
    def seed_of_data(self):
        return self.base_seed if self.data_seed is None else self.data_seed

    def domain_spec(self, which):
        kind, mix = {
            "source": (self.source_kind, self.source_mixing_seed),
            "target": (self.target_kind, self.target_mixing_seed),
        }[which]
        return DomainSpec(kind, self.height, self.width, self.channels, mixing_seed=mix,
                          n_fix=self.n_fix, sigma=self.sigma, noise=self.noise)

    def architecture(self):
        return default_architecture(self.channels, self.hidden)

    def correction_config(self):
        return CorrectionConfig(self.epsilon, self.lam, self.inner_steps,
                                self.inner_step_size, self.backtracking_halvings)

    def train_config(self):
        return TrainConfig(
            epochs=self.epochs, ft_epochs=self.ft_epochs, batch_size=self.batch_size,
            lr=self.lr, weight_decay=self.weight_decay, lr_decay=self.lr_decay,
            decay_every=self.decay_every, n_r=self.n_r,
            correction=self.correction_config(), val_fraction=self.val_fraction,
            loss_gradient=self.loss_gradient,
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _optional(parse):
    def inner(text):
        return None if text.lower() == "none" else parse(text)
    return inner


def _words(text):
    items = tuple(w.strip() for w in text.split(",") if w.strip())
    if not items:
        raise ValueError("empty list")
    return items


def _numbers(text):
    return tuple(float(w) if any(c in w for c in ".eE") else int(w) for w in _words(text))


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
_PARSERS = {"int": int, "float": float, "str": str}


def _parser_for(name):
    if name == "procedures":
        return _words
    if name == "grid":
        return _optional(_numbers)
    t = _FIELD_TYPES[name]
    base = t.split("|")[0].strip()
    parse = _PARSERS[base]
    return _optional(parse) if "None" in t else parse


KEYS = tuple(_FIELD_TYPES)
# short aliases accepted in config files
ALIASES = {"batch": "batch_size", "lambda": "lam", "wd": "weight_decay", "R": "repeats",
           "seed": "base_seed", "layers": "head_layers"}


def parse_config(text):
    """Parse config text into an :class:`ExperimentConfig`; empty text gives the defaults."""
    values, seen = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = ALIASES.get(key, key)
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: {key!r} already set on line {seen[key]}")
        if not value:
            raise ConfigError(f"line {lineno}: missing value for {key!r}")
        try:
            values[key] = _parser_for(key)(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key!r}: {exc}") from None
        seen[key] = lineno
    try:
        return ExperimentConfig(**values)
    except ValueError as exc:
        where = ", ".join(f"line {n}" for n in sorted(seen.values()))
        raise ConfigError(f"invalid configuration ({where or 'defaults'}): {exc}") from None


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def parse_domain_spec(text):
    """A :class:`DomainSpec` plus sample count from ``key = value`` text.

    Keys are the DomainSpec fields (``blob_count`` and ``blob_scale`` as two
    comma-separated numbers) plus ``count`` (default 200).
    """
    types = {f.name: f.type for f in dataclasses.fields(DomainSpec)}
    values, count = {}, 200
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key == "count":
                count = int(value)
            elif key in ("blob_count", "blob_scale"):
                nums = _numbers(value)
                if len(nums) != 2:
                    raise ValueError("expected two numbers")
                values[key] = nums
            elif key in types:
                values[key] = _PARSERS[types[key]](value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key!r}: {exc}") from None
    if count < 1:
        raise ConfigError("count must be positive")
    try:
        return DomainSpec(**values), count
    except ValueError as exc:
        raise ConfigError(f"invalid domain spec: {exc}") from None

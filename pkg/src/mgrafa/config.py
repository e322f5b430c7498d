"""INI run configuration shared by every CLI command.

Sections map onto the dataclasses that drive each stage::

    [dataset]   DatasetSpec
    [model]     ModelConfig (variant, s, s_r, T, strategy)
    [backbone]  BackboneConfig
    [train]     steps, seed, lr_decay_at
    [optimizer] AdamConfig
    [loss]      LossConfig
    [augment]   AugmentConfig
    [eval]      seed

Unknown sections and keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .data import AugmentConfig, DatasetSpec
from .errors import ConfigurationError
from .feature import BackboneConfig
from .losses import LossConfig
from .model import ModelConfig
from .tensor import AdamConfig
from .train import TrainConfig


@dataclass
class EvalConfig:
    seed: int = 0


@dataclass
class RunConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def sections(self) -> dict[str, object]:
        return {
            "dataset": self.dataset,
            "model": self.model,
            "backbone": self.model.backbone,
            "train": self.train,
            "optimizer": self.train.adam,
            "loss": self.train.loss,
            "augment": self.train.augment,
            "eval": self.eval,
        }

    def set_seed(self, seed: int) -> None:
        """Apply one seed to every stochastic stage."""
        self.dataset.seed = seed
        self.train.seed = seed
        self.eval.seed = seed

    def to_text(self) -> str:
        lines = []
        for name, obj in self.sections().items():
            lines.append(f"[{name}]")
            for key, value in _scalar_fields(obj).items():
                lines.append(f"{key} = {_format(value)}")
            lines.append("")
        return "\n".join(lines)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())


def _scalar_fields(obj) -> dict[str, object]:
    return {
        f.name: getattr(obj, f.name)
        for f in dataclasses.fields(obj)
        if not dataclasses.is_dataclass(getattr(obj, f.name))
    }


def _format(value) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_like(default, text: str, where: str):
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError(text)
            return text.lower() in ("true", "1")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, (list, tuple)):
            items = [t.strip() for t in text.split(",") if t.strip()]
            kind = type(default[0]) if default else int
            vals = [kind(t) for t in items]
            return tuple(vals) if isinstance(default, tuple) else vals
    except ValueError:
        raise ConfigurationError(f"config {where}: cannot parse {text!r}") from None
    return text


def _apply(cfg: RunConfig, parser: configparser.ConfigParser) -> RunConfig:
    sections = cfg.sections()
    for name in parser.sections():
        if name not in sections:
            raise ConfigurationError(f"config: unknown section [{name}]")
        obj = sections[name]
        known = _scalar_fields(obj)
        for key, text in parser.items(name):
            if key not in known:
                raise ConfigurationError(f"config: unknown key {key!r} in [{name}]")
            setattr(obj, key, _parse_like(known[key], text, f"[{name}] {key}"))
    # Re-run validation of dataclasses that check themselves on construction.
    bb = cfg.model.backbone
    cfg.model.backbone = BackboneConfig(**_scalar_fields(bb))
    return cfg


def load_config(path=None, text: str | None = None) -> RunConfig:
    """Defaults overlaid by the INI file at ``path`` (or the literal ``text``)."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        if path is not None:
            with open(path) as fh:
                parser.read_file(fh)
        elif text is not None:
            parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"config: {str(exc).splitlines()[0]}") from None
    except OSError as exc:
        raise ConfigurationError(f"config: cannot read {path}: {exc.strerror}") from None
    cfg = RunConfig(DatasetSpec(), ModelConfig(), TrainConfig(adam=AdamConfig(), loss=LossConfig(), augment=AugmentConfig()))
    return _apply(cfg, parser)


__all__ = ["EvalConfig", "RunConfig", "load_config"]

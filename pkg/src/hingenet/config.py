"""Run configuration: a strict JSON document with sections arch, data,
train, compress, distill, and a global seed. Unknown keys anywhere are
rejected so typos fail loudly."""

import json
from dataclasses import dataclass

from . import hinge
from .data import SyntheticDataset
from .losses import DistillConfig
from .net import ArchSpec, BlockDef
from .regularizers import DEFAULT_LAMBDA, RegularizerSpec
from .solver import CompressionConfig


class ConfigError(ValueError):
    """Malformed run configuration."""


def _check_keys(section: dict, allowed: set, where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class TrainConfig:
    epochs: int = 12
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_drops: tuple = (8,)
    lr_drop_factor: float = 0.1
    finetune_epochs: int = 15
    finetune_lr: float = 0.001


@dataclass
class DataConfig:
    n_train: int = 256
    n_test: int = 256


@dataclass
class RunConfig:
    arch: ArchSpec
    hinge_init: str
    first_hinge_groups: str | None
    plain_hinge_groups: str | None
    data: DataConfig
    train: TrainConfig
    compress: CompressionConfig
    distill: DistillConfig
    seed: int

    def make_dataset(self) -> SyntheticDataset:
        return SyntheticDataset(seed=self.seed, classes=self.arch.classes,
                                n_train=self.data.n_train, n_test=self.data.n_test,
                                channels=self.arch.input_channels,
                                height=self.arch.input_h, width=self.arch.input_w)


_DEFAULT_ARCH = {
    "input": {"channels": 1, "height": 16, "width": 16},
    "classes": 4,
    "stem_channels": 16,
    "blocks": [{"kind": "basic", "channels": 16, "stride": 1},
               {"kind": "basic", "channels": 32, "stride": 2}],
}


def _parse_arch(section: dict):
    _check_keys(section, {"input", "classes", "stem_channels", "blocks",
                          "hinge_init", "first_hinge_groups", "plain_hinge_groups"},
                "arch")
    inp = section.get("input", _DEFAULT_ARCH["input"])
    _check_keys(inp, {"channels", "height", "width"}, "arch.input")
    blocks = []
    for i, bd in enumerate(section.get("blocks", _DEFAULT_ARCH["blocks"])):
        _check_keys(bd, {"kind", "channels", "stride"}, f"arch.blocks[{i}]")
        blocks.append(BlockDef(kind=bd["kind"], channels=int(bd["channels"]),
                               stride=int(bd.get("stride", 1))))
    try:
        arch = ArchSpec(input_channels=int(inp.get("channels", 1)),
                        input_h=int(inp.get("height", 16)),
                        input_w=int(inp.get("width", 16)),
                        classes=int(section.get("classes", 4)),
                        stem_channels=int(section.get("stem_channels", 16)),
                        blocks=tuple(blocks))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    init = section.get("hinge_init", hinge.SVD_INIT)
    if init not in (hinge.SVD_INIT, hinge.IDENTITY_INIT):
        raise ConfigError(f"arch.hinge_init must be svd or identity, got {init!r}")
    first = section.get("first_hinge_groups")
    plain = section.get("plain_hinge_groups")
    for key, val in (("first_hinge_groups", first), ("plain_hinge_groups", plain)):
        if val is not None and val not in ("rows", "columns"):
            raise ConfigError(f"arch.{key} must be rows or columns, got {val!r}")
    return arch, init, first, plain


def _parse_regularizer(section: dict) -> RegularizerSpec:
    _check_keys(section, {"kind", "lambda", "epsilon"}, "compress.regularizer")
    kind = section.get("kind", "l1")
    if kind not in DEFAULT_LAMBDA:
        raise ConfigError(f"unknown regularizer kind {kind!r}")
    try:
        return RegularizerSpec(kind=kind,
                               lam=float(section.get("lambda", DEFAULT_LAMBDA[kind])),
                               epsilon=section.get("epsilon"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_compress(section: dict, seed: int) -> CompressionConfig:
    allowed = {"target_ratio", "stop_margin", "nullify_threshold", "regularizer",
               "eta", "lr_ratio", "m", "weight_decay", "anneal_decay",
               "anneal_trigger", "max_epochs", "seed", "batch_size"}
    _check_keys(section, allowed, "compress")
    reg = _parse_regularizer(section.get("regularizer", {}))
    kwargs = {k: section[k] for k in allowed
              if k in section and k not in ("regularizer",)}
    kwargs.setdefault("seed", seed)
    try:
        return CompressionConfig(regularizer=reg, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(doc, {"arch", "data", "train", "compress", "distill", "seed"}, "config")
    seed = int(doc.get("seed", 0))

    arch, init, first, plain = _parse_arch(doc.get("arch", {}))

    data_sec = doc.get("data", {})
    _check_keys(data_sec, {"n_train", "n_test"}, "data")
    data_cfg = DataConfig(n_train=int(data_sec.get("n_train", 256)),
                          n_test=int(data_sec.get("n_test", 256)))

    train_sec = dict(doc.get("train", {}))
    _check_keys(train_sec, {"epochs", "batch_size", "lr", "momentum", "weight_decay",
                            "lr_drops", "lr_drop_factor", "finetune_epochs",
                            "finetune_lr"}, "train")
    if "lr_drops" in train_sec:
        train_sec["lr_drops"] = tuple(train_sec["lr_drops"])
    train_cfg = TrainConfig(**train_sec)

    compress_cfg = _parse_compress(doc.get("compress", {}), seed)

    distill_sec = doc.get("distill", {})
    _check_keys(distill_sec, {"balance", "temperature"}, "distill")
    try:
        distill_cfg = DistillConfig(balance=float(distill_sec.get("balance", 0.4)),
                                    temperature=float(distill_sec.get("temperature", 4.0)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return RunConfig(arch=arch, hinge_init=init, first_hinge_groups=first,
                     plain_hinge_groups=plain, data=data_cfg, train=train_cfg,
                     compress=compress_cfg, distill=distill_cfg, seed=seed)


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc)

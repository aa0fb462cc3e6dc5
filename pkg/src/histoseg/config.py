"""Pipeline configuration (TOML-style key/value text) and dataset manifests
(CSV with header image_path,mask_path,split).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

from .errors import ConfigError
from .model import ModelConfig
from .stain import StainParams
from .training import TrainConfig


@dataclass(frozen=True)
class PipelineConfig:
    stain: StainParams
    patch_size: int
    margin: int
    model: ModelConfig
    train: TrainConfig
    target_image_path: str
    output_dir: str

    def __post_init__(self):
        if self.patch_size < 1 or self.margin < 0:
            raise ConfigError("patch_size must be >= 1 and margin >= 0")
        if self.model.patch_size != self.patch_size:
            raise ConfigError(
                f"model patch_size {self.model.patch_size} != grid patch_size {self.patch_size}"
            )

    @property
    def global_size(self) -> int:
        return self.patch_size + 2 * self.margin


def default_config(
    target_image_path: str,
    output_dir: str,
    patch_size: int = 256,
    margin: int = 64,
    levels: int = 3,
    base_channels: int = 8,
    seed: int = 0,
    **train_overrides,
) -> PipelineConfig:
    return PipelineConfig(
        stain=StainParams(),
        patch_size=patch_size,
        margin=margin,
        model=ModelConfig(
            patch_size=patch_size, levels=levels, base_channels=base_channels, seed=seed
        ),
        train=TrainConfig(seed=seed, **train_overrides),
        target_image_path=target_image_path,
        output_dir=output_dir,
    )


# ---------------------------------------------------------------------------
# Config text format


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    raise ConfigError(f"unsupported config value type {type(value).__name__}")


def serialize_config(config: PipelineConfig) -> str:
    s, m, t = config.stain, config.model, config.train
    lines = [
        f"target_image_path = {_format_value(config.target_image_path)}",
        f"output_dir = {_format_value(config.output_dir)}",
        "",
        "[stain]",
        f"io_intensity = {_format_value(float(s.io_intensity))}",
        f"beta = {_format_value(float(s.beta))}",
        f"alpha = {_format_value(float(s.alpha))}",
        f"concentration_percentile = {_format_value(float(s.concentration_percentile))}",
        "",
        "[grid]",
        f"patch_size = {_format_value(config.patch_size)}",
        f"margin = {_format_value(config.margin)}",
        "",
        "[model]",
        f"levels = {_format_value(m.levels)}",
        f"base_channels = {_format_value(m.base_channels)}",
        f"seed = {_format_value(m.seed)}",
        "",
        "[train]",
        f"learning_rate = {_format_value(float(t.learning_rate))}",
        f"batch_size = {_format_value(t.batch_size)}",
        f"epochs = {_format_value(t.epochs)}",
        f"threshold = {_format_value(float(t.threshold))}",
        f"beta1 = {_format_value(float(t.beta1))}",
        f"beta2 = {_format_value(float(t.beta2))}",
        f"epsilon_opt = {_format_value(float(t.epsilon_opt))}",
        f"loss_smooth = {_format_value(float(t.loss_smooth))}",
        f"augment = {_format_value(t.augment)}",
        f"seed = {_format_value(t.seed)}",
        "",
    ]
    return "\n".join(lines)


def _parse_scalar(token: str, where: str):
    token = token.strip()
    if token.startswith('"'):
        try:
            return json.loads(token)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{where}: bad string literal {token}") from exc
    if token == "true":
        return True
    if token == "false":
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse value {token!r}")


def parse_config(text: str) -> PipelineConfig:
    sections: dict[str, dict] = {"": {}}
    current = sections[""]
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            current = sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        current[key.strip()] = _parse_scalar(value, f"line {lineno}")

    def section(name):
        if name not in sections:
            raise ConfigError(f"missing [{name}] section")
        return sections[name]

    def pick(sec: dict, sec_name: str, key: str, cast):
        if key not in sec:
            raise ConfigError(f"missing key {key!r} in [{sec_name}]")
        try:
            return cast(sec[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r} in [{sec_name}]: {exc}") from exc

    top = sections[""]
    if "target_image_path" not in top or "output_dir" not in top:
        raise ConfigError("target_image_path and output_dir are required")
    stain_sec = section("stain")
    grid_sec = section("grid")
    model_sec = section("model")
    train_sec = section("train")

    patch_size = pick(grid_sec, "grid", "patch_size", int)
    try:
        return PipelineConfig(
            stain=StainParams(
                io_intensity=pick(stain_sec, "stain", "io_intensity", float),
                beta=pick(stain_sec, "stain", "beta", float),
                alpha=pick(stain_sec, "stain", "alpha", float),
                concentration_percentile=pick(
                    stain_sec, "stain", "concentration_percentile", float
                ),
            ),
            patch_size=patch_size,
            margin=pick(grid_sec, "grid", "margin", int),
            model=ModelConfig(
                patch_size=patch_size,
                levels=pick(model_sec, "model", "levels", int),
                base_channels=pick(model_sec, "model", "base_channels", int),
                seed=pick(model_sec, "model", "seed", int),
            ),
            train=TrainConfig(
                learning_rate=pick(train_sec, "train", "learning_rate", float),
                batch_size=pick(train_sec, "train", "batch_size", int),
                epochs=pick(train_sec, "train", "epochs", int),
                threshold=pick(train_sec, "train", "threshold", float),
                beta1=pick(train_sec, "train", "beta1", float),
                beta2=pick(train_sec, "train", "beta2", float),
                epsilon_opt=pick(train_sec, "train", "epsilon_opt", float),
                loss_smooth=pick(train_sec, "train", "loss_smooth", float),
                augment=pick(train_sec, "train", "augment", bool),
                seed=pick(train_sec, "train", "seed", int),
            ),
            target_image_path=str(top["target_image_path"]),
            output_dir=str(top["output_dir"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")


def save_config(config: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(config))


# ---------------------------------------------------------------------------
# Manifests

_MANIFEST_HEADER = ["image_path", "mask_path", "split"]
_SPLITS = ("train", "test")


@dataclass(frozen=True)
class ManifestRecord:
    image_path: str
    mask_path: str
    split: str


def load_manifest(path) -> list[ManifestRecord]:
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise ConfigError(f"manifest file not found: {path}")
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty manifest file")
        if header != _MANIFEST_HEADER:
            raise ConfigError(
                f"{path}: manifest header must be {','.join(_MANIFEST_HEADER)}"
            )
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ConfigError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            image_path, mask_path, split = (field.strip() for field in row)
            if not image_path or not mask_path:
                raise ConfigError(f"{path}:{lineno}: image_path and mask_path are required")
            if split not in _SPLITS:
                raise ConfigError(
                    f"{path}:{lineno}: split must be 'train' or 'test', got {split!r}"
                )
            records.append(ManifestRecord(image_path, mask_path, split))
    for column in ("image_path", "mask_path"):
        seen = [getattr(r, column) for r in records]
        if len(set(seen)) != len(seen):
            raise ConfigError(f"{path}: duplicate {column} entries")
    return records


def save_manifest(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_MANIFEST_HEADER)
        for rec in records:
            writer.writerow([rec.image_path, rec.mask_path, rec.split])

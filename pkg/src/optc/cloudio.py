"""Text cloud files (`OPTC v1`), run configuration parsing, and the
effective-config echo. Both formats are strict: malformed cloud lines are
reported with their line number, unknown config keys are fatal."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .backbone import ModelConfig
from .geometry import PointCloud, SceneConfig
from .sorter import SorterConfig
from .train import TrainConfig

_HEADER_RE = re.compile(r"^OPTC v1 N=(\d+) F=(\d+) C=(\d+)$")


class CloudFormatError(ValueError):
    """Malformed cloud file; the message names the offending line."""


class ConfigError(ValueError):
    """Invalid or unknown configuration key/value."""


def write_cloud(cloud: PointCloud, path: str | Path) -> None:
    """UTF-8 text, one point per line, 17 significant digits (lossless for
    float64): `x,y,z[,f1..fF][,label]` behind a header and class-name line."""
    names = cloud.class_names or tuple(f"class_{i}" for i in range(cloud.class_count))
    for name in names:
        if "," in name or "\n" in name:
            raise ValueError(f"class name {name!r} may not contain commas or newlines")
    lines = [f"OPTC v1 N={cloud.n} F={cloud.feature_count} C={cloud.class_count}"]
    lines.append(",".join(names))
    for i in range(cloud.n):
        cells = [_fmt(v) for v in cloud.positions[i]]
        cells += [_fmt(v) for v in cloud.features[i]]
        if cloud.labels is not None:
            cells.append(str(int(cloud.labels[i])))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def read_cloud(path: str | Path) -> PointCloud:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CloudFormatError(f"{path}:1: empty file")
    m = _HEADER_RE.match(lines[0])
    if not m:
        raise CloudFormatError(f"{path}:1: malformed header {lines[0]!r}")
    n, f, c = (int(g) for g in m.groups())
    if n < 1:
        raise CloudFormatError(f"{path}:1: N must be >= 1")
    if len(lines) < 2:
        raise CloudFormatError(f"{path}:2: missing class-name line")
    names = tuple(lines[1].split(","))
    if len(names) != c:
        raise CloudFormatError(f"{path}:2: expected {c} class names, got {len(names)}")

    expected = 2 + n
    if len(lines) > expected:
        raise CloudFormatError(f"{path}:{expected + 1}: unexpected extra data row")
    if len(lines) < expected:
        raise CloudFormatError(
            f"{path}:{len(lines) + 1}: expected {n} point rows, file ends early"
        )

    positions = np.empty((n, 3))
    features = np.empty((n, f))
    labels = None
    ncols = None
    for i in range(n):
        lineno = i + 3
        cells = lines[i + 2].split(",")
        if ncols is None:
            if len(cells) == 3 + f:
                ncols = len(cells)
            elif len(cells) == 3 + f + 1:
                ncols = len(cells)
                labels = np.empty(n, dtype=np.int64)
            else:
                raise CloudFormatError(
                    f"{path}:{lineno}: expected {3 + f} or {3 + f + 1} columns, got {len(cells)}"
                )
        elif len(cells) != ncols:
            raise CloudFormatError(
                f"{path}:{lineno}: expected {ncols} columns, got {len(cells)}"
            )
        try:
            values = [float(x) for x in cells[: 3 + f]]
        except ValueError:
            raise CloudFormatError(f"{path}:{lineno}: unparseable number") from None
        if not all(np.isfinite(values)):
            raise CloudFormatError(f"{path}:{lineno}: non-finite value")
        positions[i] = values[:3]
        features[i] = values[3 : 3 + f]
        if labels is not None:
            try:
                label = int(cells[-1])
            except ValueError:
                raise CloudFormatError(f"{path}:{lineno}: unparseable label") from None
            if not 0 <= label < c:
                raise CloudFormatError(
                    f"{path}:{lineno}: label {label} outside [0, {c})"
                )
            labels[i] = label
    return PointCloud(
        positions=positions,
        features=features,
        labels=labels,
        class_count=c,
        class_names=names,
    )


@dataclass
class RunConfig:
    """Everything a run needs; the train section embeds sorter/model/seed."""

    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    sorter: SorterConfig = field(default_factory=SorterConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.train = dataclasses.replace(
            self.train, sorter=self.sorter, model=self.model, seed=self.seed
        )

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seed=int(seed))

    def with_sorter_k(self, k: int) -> "RunConfig":
        return dataclasses.replace(
            self, sorter=dataclasses.replace(self.sorter, k=int(k))
        )


_SECTIONS = {
    "scene": SceneConfig,
    "sorter": SorterConfig,
    "model": ModelConfig,
    "train": TrainConfig,
}
# assembled by RunConfig, not settable from the file
_EXCLUDED = {"train": {"sorter", "model", "seed"}, "scene": set(), "sorter": set(), "model": set()}


def parse_config(path: str | Path | None) -> RunConfig:
    """YAML run configuration; an absent or empty file means all defaults.

    Every field is range-checked by its dataclass; unknown keys are fatal.
    """
    raw = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        loaded = yaml.safe_load(text)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        raw = loaded
    return config_from_dict(raw, origin=str(path) if path else "<defaults>")


def config_from_dict(raw: dict, origin: str = "<dict>") -> RunConfig:
    known_top = {"seed", *_SECTIONS}
    for key in raw:
        if key not in known_top:
            raise ConfigError(f"{origin}: unknown key: {key}")
    kwargs = {}
    if "seed" in raw:
        seed = raw["seed"]
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"{origin}: seed must be a nonnegative integer")
        kwargs["seed"] = seed
    for section, cls in _SECTIONS.items():
        data = raw.get(section, {})
        if not isinstance(data, dict):
            raise ConfigError(f"{origin}: section {section} must be a mapping")
        allowed = {f.name for f in fields(cls)} - _EXCLUDED[section]
        for key in data:
            if key not in allowed:
                raise ConfigError(f"{origin}: unknown key: {section}.{key}")
        cleaned = {}
        for key, value in data.items():
            if isinstance(value, list):
                value = tuple(value)
            cleaned[key] = value
        try:
            kwargs[section] = cls(**cleaned)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{origin}: section {section}: {exc}") from None
    return RunConfig(**kwargs)


def effective_config_yaml(config: RunConfig) -> str:
    """Every field with its effective value, defaults included."""
    doc = {"seed": config.seed}
    for section, cls in _SECTIONS.items():
        obj = getattr(config, section)
        doc[section] = {}
        for f in fields(cls):
            if f.name in _EXCLUDED[section]:
                continue
            value = getattr(obj, f.name)
            if isinstance(value, tuple):
                value = list(value)
            doc[section][f.name] = value
    return yaml.safe_dump(doc, sort_keys=True)


def write_effective_config(config: RunConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir) / "effective-config.yaml"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(effective_config_yaml(config), encoding="utf-8")
    return out

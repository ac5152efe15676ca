"""Flat ``section.key=value`` experiment configs.

A config names its experiment kind and master seed; every other key is an
optional override of a dataclass default.  ``materialize`` writes every
value back out, defaults included, so a saved config fully pins a run.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields, is_dataclass
from pathlib import Path

from .attack2p import Attack2pExperiment
from .lmattack import LmAttackExperiment
from .rarl import RarlExperiment

EXPERIMENTS = {
    "attack2p": Attack2pExperiment,
    "lmattack": LmAttackExperiment,
    "rarl": RarlExperiment,
}
REQUIRED = ("experiment", "seed")
TOP_LEVEL = ("experiment", "seed", "out_dir")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    exp: object  # one of the EXPERIMENTS dataclasses, seed included
    out_dir: str = ""

    @property
    def seed(self) -> int:
        return self.exp.seed


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _convert(text: str, typ, key: str, where: str):
    try:
        if typ is bool:
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if typ is int:
            return int(text.replace("_", ""))
        if typ is float:
            return float(text)
        return text
    except ValueError as e:
        raise ConfigError(f"{where}: bad value for {key}: {e}") from None


def _leaf_keys(cls, prefix: str = "") -> dict[str, type]:
    out = {}
    hints = _hints(cls)
    for f in fields(cls):
        typ = hints[f.name]
        if isinstance(typ, type) and is_dataclass(typ):
            out.update(_leaf_keys(typ, f"{prefix}{f.name}."))
        else:
            out[f"{prefix}{f.name}"] = typ
    return out


def parse_lines(text: str, source: str = "<config>") -> dict[str, tuple[str, str]]:
    """``key -> (raw value, location)``; later duplicates are errors."""
    items: dict[str, tuple[str, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected key=value, got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"{where}: empty key")
        if key in items:
            raise ConfigError(f"{where}: duplicate key {key} (first set at {items[key][1]})")
        items[key] = (value, where)
    return items


def _build(default, values: dict[str, object], prefix: str = ""):
    """Copy of ``default`` with ``values`` applied; nested sections start from
    the parent's own default instance so per-experiment defaults survive."""
    hints = _hints(type(default))
    kwargs = {}
    for f in fields(default):
        typ = hints[f.name]
        if isinstance(typ, type) and is_dataclass(typ):
            kwargs[f.name] = _build(getattr(default, f.name), values, f"{prefix}{f.name}.")
        elif f"{prefix}{f.name}" in values:
            kwargs[f.name] = values[f"{prefix}{f.name}"]
    return dataclasses.replace(default, **kwargs)


def build_config(items: dict[str, tuple[str, str]]) -> ExperimentConfig:
    missing = [k for k in REQUIRED if k not in items]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    kind, where = items["experiment"]
    if kind not in EXPERIMENTS:
        raise ConfigError(f"{where}: unknown experiment {kind!r}; choose from {sorted(EXPERIMENTS)}")
    cls = EXPERIMENTS[kind]
    known = _leaf_keys(cls)
    values = {}
    for key, (raw, loc) in items.items():
        if key in ("experiment", "out_dir"):
            continue
        if key not in known:
            raise ConfigError(f"{loc}: unknown key {key} for experiment {kind}")
        values[key] = _convert(raw, known[key], key, loc)
    try:
        exp = _build(cls(), values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {kind} config: {e}") from None
    return ExperimentConfig(kind, exp, items.get("out_dir", ("", ""))[0])


def apply_overrides(items: dict[str, tuple[str, str]], overrides: typing.Iterable[str]) -> dict:
    items = dict(items)
    for i, ov in enumerate(overrides, start=1):
        if "=" not in ov:
            raise ConfigError(f"override {i}: expected key=value, got {ov!r}")
        k, v = (p.strip() for p in ov.split("=", 1))
        items[k] = (v, f"override {i} ({ov})")
    return items


def parse_config(text: str, source: str = "<config>", overrides: typing.Iterable[str] = ()) -> ExperimentConfig:
    return build_config(apply_overrides(parse_lines(text, source), overrides))


def load_config(path: str | Path, overrides: typing.Iterable[str] = ()) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text, str(path), overrides)


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def flatten(exp, prefix: str = "") -> dict[str, object]:
    out = {}
    for f in fields(exp):
        v = getattr(exp, f.name)
        if is_dataclass(v):
            out.update(flatten(v, f"{prefix}{f.name}."))
        else:
            out[f"{prefix}{f.name}"] = v
    return out


def materialize(cfg: ExperimentConfig) -> str:
    """Complete config text with every default written out."""
    lines = [f"experiment={cfg.kind}"]
    if cfg.out_dir:
        lines.append(f"out_dir={cfg.out_dir}")
    for k, v in flatten(cfg.exp).items():
        lines.append(f"{k}={_fmt_value(v)}")
    return "\n".join(lines) + "\n"


def with_values(cfg: ExperimentConfig, **flat) -> ExperimentConfig:
    """Copy with flat ``section__key`` overrides (double underscore for dots)."""
    text = materialize(cfg)
    return parse_config(text, "<materialized>", [f"{k.replace('__', '.')}={_fmt_value(v)}" for k, v in flat.items()])


def default_config(kind: str, seed: int = 0) -> ExperimentConfig:
    if kind not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {kind!r}")
    return ExperimentConfig(kind, dataclasses.replace(EXPERIMENTS[kind](), seed=seed))

"""Run configuration: one INI file covering the benchmark, trainer and run.

Every key has a default, so an empty file (or no file) is a valid config.
Keys are grouped into sections::

    [scene]    benchmark geometry, classes, domain shift, split sizes, seed
    [trainer]  mode, thresholds, optimizer, steps
    [decon]    temperature, weight
    [morph]    kernel_size, iterations, crop_size, max_crop_retries
    [mix]      resize_scale
    [run]      out, archive, seeds, jobs

Command-line overrides use ``section.key=value``. Unknown sections or keys
are rejected; values are validated by the dataclasses they feed.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .dataset import DomainParams, SceneConfig
from .losses import DeconConfig
from .mixing import MixConfig
from .morphology import MorphConfig
from .trainer import TrainerConfig


class ConfigError(ValueError):
    """Malformed configuration: unknown key, unparsable value, bad syntax."""


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig
    counts: tuple[int, int, int]
    data_seed: int
    trainer: TrainerConfig
    out: Path
    archive: Path
    seeds: tuple[int, ...]
    jobs: int = 1


def _domain_keys(prefix: str, d: DomainParams) -> dict:
    return {f"{prefix}_{f.name}": getattr(d, f.name) for f in fields(DomainParams)}


def _scene_defaults() -> dict:
    s = SceneConfig()
    out = {f.name: getattr(s, f.name) for f in fields(SceneConfig) if f.name not in ("source", "target")}
    out.update(_domain_keys("source", s.source))
    out.update(_domain_keys("target", s.target))
    out.update(num_source=200, num_target=200, num_eval=100, seed=0)
    return out


def _trainer_defaults() -> dict:
    t = TrainerConfig()
    return {f.name: getattr(t, f.name) for f in fields(TrainerConfig) if f.name not in ("decon", "mix", "seed")}


def defaults() -> dict[str, dict]:
    decon = DeconConfig()
    return {
        "scene": _scene_defaults(),
        "trainer": _trainer_defaults(),
        "decon": {"temperature": decon.temperature, "weight": decon.weight},
        "morph": {f.name: getattr(decon.morph, f.name) for f in fields(MorphConfig)},
        "mix": {"resize_scale": MixConfig().resize_scale},
        "run": {"out": "runs", "archive": "", "seeds": (0, 1, 2), "jobs": 1},
    }


def _parse(text: str, like, where: str):
    text = text.strip()
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if like and isinstance(like[0], int):
                return tuple(int(t) for t in items)
            return tuple(items)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {type(like).__name__}") from None
    return text


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def _apply(values: dict, section: str, key: str, text: str, where: str) -> None:
    if section not in values:
        raise ConfigError(f"{where}: unknown section [{section}]")
    if key not in values[section]:
        raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
    values[section][key] = _parse(text, values[section][key], f"{where} [{section}] {key}")


def _build(v: dict) -> RunConfig:
    sc = dict(v["scene"])
    counts = (sc.pop("num_source"), sc.pop("num_target"), sc.pop("num_eval"))
    data_seed = sc.pop("seed")
    domains = {}
    for prefix in ("source", "target"):
        domains[prefix] = DomainParams(**{f.name: sc.pop(f"{prefix}_{f.name}") for f in fields(DomainParams)})
    scene = SceneConfig(**sc, **domains)
    if min(counts) < 1:
        raise ValueError("split sizes must be positive")
    morph = MorphConfig(**v["morph"])
    if morph.crop_size > min(scene.height, scene.width):
        raise ValueError(f"crop_size {morph.crop_size} exceeds the {scene.height}x{scene.width} images")
    decon = DeconConfig(morph=morph, **v["decon"])
    mix = MixConfig(**v["mix"])
    trainer = TrainerConfig(decon=decon, mix=mix, **v["trainer"])
    run = v["run"]
    if not run["seeds"]:
        raise ValueError("at least one seed is required")
    if run["jobs"] < 1:
        raise ValueError("jobs must be >= 1")
    out = Path(run["out"])
    archive = Path(run["archive"]) if run["archive"] else out / "benchmark"
    return RunConfig(scene, counts, data_seed, trainer, out, archive, tuple(run["seeds"]), run["jobs"])


def load_run_config(path=None, overrides=()) -> RunConfig:
    """Read an INI file (optional), apply ``section.key=value`` overrides.

    Raises ConfigError for structural problems and ValueError for values
    rejected by validation; OSError propagates for unreadable files.
    """
    values = defaults()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, text in parser.items(section):
                _apply(values, section, key, text, str(path))
    for item in overrides:
        name, sep, text = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        _apply(values, section, key, text, "override")
    return _build(values)


def effective_values(rc: RunConfig) -> dict[str, dict]:
    """The full key/value view of a RunConfig, defaults included."""
    sc = {f.name: getattr(rc.scene, f.name) for f in fields(SceneConfig) if f.name not in ("source", "target")}
    sc.update(_domain_keys("source", rc.scene.source))
    sc.update(_domain_keys("target", rc.scene.target))
    sc.update(num_source=rc.counts[0], num_target=rc.counts[1], num_eval=rc.counts[2], seed=rc.data_seed)
    t = rc.trainer
    return {
        "scene": sc,
        "trainer": {f.name: getattr(t, f.name) for f in fields(TrainerConfig) if f.name not in ("decon", "mix", "seed")},
        "decon": {"temperature": t.decon.temperature, "weight": t.decon.weight},
        "morph": {f.name: getattr(t.decon.morph, f.name) for f in fields(MorphConfig)},
        "mix": {"resize_scale": t.mix.resize_scale},
        "run": {"out": str(rc.out), "archive": str(rc.archive), "seeds": rc.seeds, "jobs": rc.jobs},
    }


def dump_run_config(rc: RunConfig, extra: dict | None = None) -> str:
    """INI text with every key spelled out; ``extra`` adds comment lines."""
    lines = [f"# {k} = {v}" for k, v in (extra or {}).items()]
    for section, values in effective_values(rc).items():
        if lines:
            lines.append("")
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {_format(v)}" for k, v in values.items())
    return "\n".join(lines) + "\n"


def with_run(rc: RunConfig, **changes) -> RunConfig:
    return replace(rc, **changes)

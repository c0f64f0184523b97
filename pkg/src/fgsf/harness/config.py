"""Run configuration: INI file with [run], [sac], [scrub] and [metrics] sections."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from fgsf.fim import ScrubConfig
from fgsf.metrics import DormantSpec
from fgsf.sac import SacConfig

METHODS = ("baseline", "fgsf", "reset", "gauss")
RUN_ESTIMATORS = ("diag", "kfac", "ekfac")
DEFAULT_STEPS = {"pendulum": 30_000, "shifting_goal": 50_000}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env: str = "pendulum"
    method: str = "baseline"
    scrub: ScrubConfig = field(default_factory=ScrubConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    dormant: DormantSpec = field(default_factory=DormantSpec)
    total_env_steps: int = 0  # 0 -> per-environment default
    eval_every: int = 1000
    eval_episodes: int = 5
    log_every: int = 200
    seed: int = 0
    output_dir: str = "runs/default"
    record_wall_time: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.env not in DEFAULT_STEPS:
            raise ConfigError(f"unknown environment {self.env!r}")
        if self.scrub.estimator not in RUN_ESTIMATORS:
            raise ConfigError(f"training runs support estimators {RUN_ESTIMATORS}")
        if self.total_env_steps == 0:
            self.total_env_steps = DEFAULT_STEPS[self.env]
        for name in ("total_env_steps", "eval_every", "eval_episodes", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")

    @property
    def expected_updates(self) -> int:
        return self.sac.replay_ratio * max(0, self.total_env_steps - self.sac.warmup_steps)

    @property
    def reset_interval(self) -> int:
        if self.scrub.reset_interval:
            return self.scrub.reset_interval
        return max(1, self.expected_updates // 5)


_SECTIONS = {"sac": SacConfig, "scrub": ScrubConfig, "metrics": DormantSpec}
_ATTR = {"sac": "sac", "scrub": "scrub", "metrics": "dormant"}
# config-file key -> dataclass field
_RENAMES = {("scrub", "lambda"): "lam"}
_RUN_FIELDS = [f.name for f in dataclasses.fields(RunConfig) if f.name not in _ATTR.values()]


def _parse(raw: str, like):
    if isinstance(like, bool):
        v = raw.strip().lower()
        if v not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ConfigError(f"not a boolean: {raw!r}")
        return v in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        return tuple(int(x) for x in raw.replace(",", " ").split())
    if raw.strip().lower() == "none":
        return None
    return raw.strip()


def _defaults(cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
            out[f.name] = f.default_factory()  # type: ignore[misc]
    return out


def build_config(values: dict[str, dict[str, str]]) -> RunConfig:
    """Build from ``{section: {key: raw string}}``; unknown keys are errors."""
    try:
        sub = {}
        for section, cls in _SECTIONS.items():
            defaults = _defaults(cls)
            kwargs = {}
            for key, raw in values.get(section, {}).items():
                name = _RENAMES.get((section, key), key)
                if name not in defaults:
                    raise ConfigError(f"unknown key [{section}] {key}")
                like = defaults[name]
                if like is None and name == "target_entropy":
                    like = 0.0 if raw.strip().lower() != "none" else None
                kwargs[name] = _parse(raw, like) if like is not None else None
            sub[_ATTR[section]] = cls(**kwargs)
        run_defaults = _defaults(RunConfig)
        kwargs = {}
        for key, raw in values.get("run", {}).items():
            if key not in _RUN_FIELDS:
                raise ConfigError(f"unknown key [run] {key}")
            kwargs[key] = _parse(raw, run_defaults[key])
        unknown = set(values) - set(_SECTIONS) - {"run"}
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        return RunConfig(**kwargs, **sub)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def read_config_file(path: str | Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return {s: dict(parser[s]) for s in parser.sections()}


def load_config(path: str | Path | None = None, overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    values = read_config_file(path) if path else {}
    for section, kv in (overrides or {}).items():
        values.setdefault(section, {}).update(kv)
    return build_config(values)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def config_to_dict(cfg: RunConfig) -> dict[str, dict[str, str]]:
    out = {"run": {name: _fmt(getattr(cfg, name)) for name in _RUN_FIELDS}}
    inverse = {v: k for (s, k), v in _RENAMES.items()}
    for section, attr in _ATTR.items():
        obj = getattr(cfg, attr)
        out[section] = {
            (inverse.get(f.name, f.name) if section == "scrub" else f.name): _fmt(getattr(obj, f.name))
            for f in dataclasses.fields(obj)
        }
    return out


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for section, kv in config_to_dict(cfg).items():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in kv.items()]
        lines.append("")
    return "\n".join(lines)


def replace(cfg: RunConfig, **changes) -> RunConfig:
    """Copy with changes; keys ``sac.x`` / ``scrub.x`` reach nested fields."""
    nested: dict[str, dict] = {}
    top = {}
    for key, value in changes.items():
        if "." in key:
            section, name = key.split(".", 1)
            nested.setdefault(section, {})[name] = value
        else:
            top[key] = value
    for section, kv in nested.items():
        top[section] = dataclasses.replace(getattr(cfg, section), **kv)
    return dataclasses.replace(cfg, **top)

"""Pipeline configuration: one TOML file drives every CLI stage.

Unknown keys are rejected so a config file cannot silently drift from the
code. Defaults live on the dataclasses; `tablerl config show` prints them
all.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import tomli

from .grpo import GrpoConfig
from .rewards import MatchConfig
from .traces import FilterConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsConfig:
    instances: str = "out/instances.jsonl"
    candidates: str = "out/candidates.jsonl"


@dataclass(frozen=True)
class SamplingConfig:
    n_per_dataset: int = 2000
    seed: int = 0


@dataclass(frozen=True)
class ClientSection:
    kind: str = "mock"  # "mock" | "http"
    model: str = "mock-model"
    temperature: float = 0.6
    seed: int = 0
    consistency_rate: float = 1.0
    verbosity_rate: float = 0.0
    judge_agree_rate: float = 1.0
    endpoint_url: str = "http://localhost:8000/v1/chat/completions"
    api_key_env_var: str = "TABLERL_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    max_in_flight: int = 8

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ConfigError(f"client kind must be mock|http, got {self.kind!r}")


@dataclass(frozen=True)
class RewardWeights:
    w_acc: float = 1.0
    w_fmt: float = 1.0


@dataclass(frozen=True)
class SftConfig:
    lr: float = 1.0
    epochs: int = 100


@dataclass(frozen=True)
class PipelineConfig:
    output_dir: str = "out"
    paths: PathsConfig = field(default_factory=PathsConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    generator: ClientSection = field(default_factory=ClientSection)
    judge: ClientSection = field(default_factory=ClientSection)
    use_judge: bool = False
    filter: FilterConfig = field(default_factory=FilterConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    rewards: RewardWeights = field(default_factory=RewardWeights)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    sft: SftConfig = field(default_factory=SftConfig)


_SECTION_TYPES = {
    "paths": PathsConfig,
    "sampling": SamplingConfig,
    "generator": ClientSection,
    "judge": ClientSection,
    "filter": FilterConfig,
    "match": MatchConfig,
    "rewards": RewardWeights,
    "grpo": GrpoConfig,
    "sft": SftConfig,
}


def _build_section(cls, data: dict, section: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    coerced = dict(data)
    if cls is GrpoConfig and "reward_weights" in coerced:
        coerced["reward_weights"] = tuple(coerced["reward_weights"])
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [{section}] section: {exc}") from exc


def load_config(path: Optional[str] = None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path, "rb") as fh:
        try:
            data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from exc
    top_scalars = {"output_dir", "use_judge"}
    unknown = set(data) - top_scalars - set(_SECTION_TYPES)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs = {k: data[k] for k in top_scalars if k in data}
    for name, cls in _SECTION_TYPES.items():
        if name in data:
            if not isinstance(data[name], dict):
                raise ConfigError(f"[{name}] must be a table")
            kwargs[name] = _build_section(cls, data[name], name)
    return PipelineConfig(**kwargs)


def config_to_dict(config: PipelineConfig) -> dict:
    return dataclasses.asdict(config)


def config_hash(config: PipelineConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def describe_defaults() -> list:
    """(dotted key, default value) for every config field; used by the CLI
    help epilog and `config show`, so docs cannot drift from the code."""
    out = []
    default = PipelineConfig()
    for f in fields(PipelineConfig):
        value = getattr(default, f.name)
        if dataclasses.is_dataclass(value):
            for sub in fields(value):
                out.append((f"{f.name}.{sub.name}", getattr(value, sub.name)))
        else:
            out.append((f.name, value))
    return out

"""Resolved pipeline configuration: INI file, flag overrides, stable hash.

Precedence is flags over file over defaults. The only environment variable
the pipeline reads is the API credential named by llm.api_key_env_var; every
other knob lives in the config so runs are reproducible from the file alone.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

DEFAULT_THETA_SIM = 0.7
DEFAULT_THETA_OUT = 0.55
DEFAULT_PROPORTION = 0.6
DEFAULT_WALKS = 4
DEFAULT_SEED = 17


@dataclass
class LlmSection:
    backend: str = "stub"
    endpoint_url: str = ""
    model_name: str = ""
    api_key_env_var: str = "VULRTEX_API_KEY"
    stub_rules_path: str = ""
    stub_jitter: float = 0.0
    max_retries: int = 3
    deadline_seconds: float = 120.0
    concurrency_limit: int = 4
    temperature: float = 0.3


@dataclass
class ToolSection:
    scr_backend: str = "stub"
    code_backend: str = "stub"
    scr_fixtures_dir: str = ""
    scr_endpoint: str = ""
    code_endpoint: str = ""
    cache_dir: str = ""


@dataclass
class VaSection:
    path: str = ""


@dataclass
class PipelineConfig:
    theta_sim: float = DEFAULT_THETA_SIM
    theta_out: float = DEFAULT_THETA_OUT
    historical_proportion: float = DEFAULT_PROPORTION
    walks: int = DEFAULT_WALKS
    seed: int = DEFAULT_SEED
    runs: int = 1
    pr_interval: float = 0.05
    correction_enabled: bool = True
    inclusion_order: bool = True
    max_depth: int = 6
    max_nodes: int = 24
    branch_limit: int = 4
    corpus_path: str = ""
    db_path: str = "reasoning-db"
    llm: LlmSection = field(default_factory=LlmSection)
    tool: ToolSection = field(default_factory=ToolSection)
    va: VaSection = field(default_factory=VaSection)

    def validate(self) -> None:
        for name in ("theta_sim", "theta_out", "historical_proportion"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if not 0.0 < self.pr_interval < 1.0:
            raise ConfigError(f"pr_interval must be in (0, 1), got {self.pr_interval}")
        if self.walks < 1:
            raise ConfigError("walks must be at least 1")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if self.max_depth < 1 or self.max_nodes < 1 or self.branch_limit < 1:
            raise ConfigError("reasoning budgets must be at least 1")
        if self.llm.backend not in ("stub", "http"):
            raise ConfigError(f"unknown llm backend {self.llm.backend!r}")
        for side in ("scr_backend", "code_backend"):
            if getattr(self.tool, side) not in ("stub", "http"):
                raise ConfigError(f"unknown tool backend {getattr(self.tool, side)!r}")

    def resolved_dict(self) -> dict:
        return asdict(self)


_SECTION_FIELDS = {
    "llm": LlmSection,
    "tool": ToolSection,
    "va": VaSection,
}

# keys that define the identity of a run's outputs; output locations and
# presentation knobs (paths, pr_interval) deliberately stay out
_HASH_KEYS = (
    "theta_sim", "theta_out", "historical_proportion", "walks", "seed", "runs",
    "correction_enabled", "inclusion_order", "max_depth", "max_nodes",
    "branch_limit", "corpus_path", "llm", "tool", "va",
)


def _coerce(raw: str, target_type: type):
    if target_type is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return target_type(raw)


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Defaults, overlaid with the INI file when one is given."""
    cfg = PipelineConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"config file not found: {path}")
    try:
        if parser.has_section("pipeline"):
            known = {f.name for f in fields(PipelineConfig)} - set(_SECTION_FIELDS)
            for name, raw in parser.items("pipeline"):
                if name not in known:
                    raise ConfigError(f"unknown pipeline option {name!r}")
                setattr(cfg, name, _coerce(raw, type(getattr(cfg, name))))
        for section, cls in _SECTION_FIELDS.items():
            if not parser.has_section(section):
                continue
            target = getattr(cfg, section)
            known = {f.name for f in fields(cls)}
            for name, raw in parser.items(section):
                if name not in known:
                    raise ConfigError(f"unknown {section} option {name!r}")
                setattr(target, name, _coerce(raw, type(getattr(target, name))))
    except ValueError as exc:
        raise ConfigError(f"bad value in {path}: {exc}") from exc
    unknown = [s for s in parser.sections() if s not in ("pipeline", *_SECTION_FIELDS)]
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    return cfg


def apply_overrides(cfg: PipelineConfig, overrides: dict) -> PipelineConfig:
    """Flag values win over the file; dotted keys reach the sections."""
    for key, value in overrides.items():
        if value is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            target = getattr(cfg, section, None)
            if target is None or not hasattr(target, name):
                raise ConfigError(f"unknown config key {key}")
            setattr(target, name, value)
        else:
            if not hasattr(cfg, key) or key in _SECTION_FIELDS:
                raise ConfigError(f"unknown config key {key}")
            setattr(cfg, key, value)
    return cfg


def config_hash(cfg: PipelineConfig) -> str:
    """Short stable digest of the run-identity subset of the config."""
    full = cfg.resolved_dict()
    core = {k: full[k] for k in _HASH_KEYS}
    payload = json.dumps(core, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def check_artifact_hash(artifact_hash: str | None, cfg: PipelineConfig,
                        artifact_name: str) -> None:
    """An artifact built under a different core config cannot be reused."""
    if artifact_hash is None:
        return
    current = config_hash(cfg)
    if artifact_hash != current:
        raise ConfigError(
            f"{artifact_name} was built with config {artifact_hash}, "
            f"current config is {current}; refusing to mix runs")

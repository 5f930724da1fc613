"""Pipeline configuration: defaults, config-file loading, flag overrides.

Precedence is flags > config file > environment > defaults. The defaults
mirror the published inference setup this pipeline reproduces: top-5 files,
5 root causes, 60 candidate patches, 2 PoCs per style (4 total).
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .gateway import Gateway, HttpBackend, ScriptedBackend

ENV_BACKEND_URL = "PATCHKIT_BACKEND_URL"
ENV_BACKEND_TOKEN = "PATCHKIT_BACKEND_TOKEN"
ENV_SCRIPTED_DIR = "PATCHKIT_SCRIPTED_DIR"

DEFAULT_IGNORE_RULES = (".git/**", "__pycache__/**", "*.pyc", ".hypothesis/**")


@dataclass
class PipelineConfig:
    # inference shape
    file_number: int = 10
    top_k_files: int = 5
    root_causes: int = 5
    candidates_k: int = 60
    pocs_per_style: int = 2
    loc_samples: int = 4
    critique_enabled: bool = True
    refine_policy: str = "replace"
    window_lines: int = 10

    # budgets
    context_tokens: int = 32768
    scaffold_tokens: int = 4096
    max_output_tokens: int = 4096

    # sandbox
    poc_timeout_s: float = 60.0
    test_timeout_s: float = 120.0
    output_limit_bytes: int = 65536
    poc_retries: int = 3
    deny_network: bool = True
    workers: int = 4

    # scoring / application
    func_cap: int | None = None
    on_ambiguous: str = "fail"

    # backend
    backend: str = "scripted"  # scripted | http
    scripted_dir: str | None = None
    http_endpoint: str | None = None
    http_token: str = ""
    retry_attempts: int = 3
    retry_backoff_s: float = 1.0
    max_concurrency: int | None = None

    # repo scanning
    ignore_rules: tuple = DEFAULT_IGNORE_RULES

    def __post_init__(self):
        for name in (
            "file_number", "top_k_files", "root_causes", "candidates_k",
            "pocs_per_style", "loc_samples",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.context_tokens <= self.scaffold_tokens:
            raise ValueError("context_tokens must exceed scaffold_tokens")
        if self.refine_policy not in ("replace", "keep-both"):
            raise ValueError(f"unknown refine_policy {self.refine_policy!r}")
        if self.on_ambiguous not in ("fail", "first"):
            raise ValueError(f"unknown on_ambiguous policy {self.on_ambiguous!r}")
        self.ignore_rules = tuple(self.ignore_rules)

    @property
    def prompt_budget(self) -> int:
        return self.context_tokens - self.scaffold_tokens

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_NAMES = {f.name for f in dataclasses.fields(PipelineConfig)}


def load_config(config_path=None, overrides: dict | None = None) -> PipelineConfig:
    """Build the effective config from defaults, file, env, and overrides."""
    values: dict = {}

    env_url = os.environ.get(ENV_BACKEND_URL)
    if env_url:
        values["http_endpoint"] = env_url
        values["backend"] = "http"
    env_token = os.environ.get(ENV_BACKEND_TOKEN)
    if env_token:
        values["http_token"] = env_token
    env_scripted = os.environ.get(ENV_SCRIPTED_DIR)
    if env_scripted:
        values["scripted_dir"] = env_scripted

    if config_path:
        loaded = yaml.safe_load(Path(config_path).read_text(encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"config file {config_path} must hold a key/value tree")
        unknown = set(loaded) - _FIELD_NAMES
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(loaded)

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_NAMES:
            raise ValueError(f"unknown config override {key!r}")
        values[key] = value

    return PipelineConfig(**values)


def build_gateway(config: PipelineConfig) -> Gateway:
    if config.backend == "scripted":
        if not config.scripted_dir:
            raise ValueError(
                f"scripted backend needs scripted_dir (or ${ENV_SCRIPTED_DIR})"
            )
        backend = ScriptedBackend(config.scripted_dir)
    elif config.backend == "http":
        if not config.http_endpoint:
            raise ValueError(f"http backend needs http_endpoint (or ${ENV_BACKEND_URL})")
        backend = HttpBackend(config.http_endpoint, config.http_token)
    else:
        raise ValueError(f"unknown backend {config.backend!r}")
    return Gateway(
        backend,
        max_attempts=config.retry_attempts,
        backoff_s=config.retry_backoff_s,
        max_concurrency=config.max_concurrency,
    )

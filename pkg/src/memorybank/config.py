"""Service configuration: key-value file, CLI overrides, environment.

The config file is plain ``key = value`` lines with ``#`` comments.
Credentials never live in the file; they come from the environment
(MEMORYBANK_LLM_API_KEY, MEMORYBANK_EMBED_API_KEY).
"""

from __future__ import annotations

import datetime as dt
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .core import resolve_timezone
from .engine import MemoryBankEngine
from .errors import InvalidConfigError
from .forgetting import DecayPolicy
from .retrieval import HashingEmbedder, RemoteEmbedder
from .summarization import SUPPORTED_LANGUAGES, MockLanguageModel, RemoteChatModel

LLM_API_KEY_ENV = "MEMORYBANK_LLM_API_KEY"
EMBED_API_KEY_ENV = "MEMORYBANK_EMBED_API_KEY"


@dataclass
class ServiceConfig:
    data_dir: str | None = None
    embedder_kind: str = "hashing"  # hashing | remote
    embedder_endpoint: str = ""
    embedder_model: str = ""
    embedder_dim: int = 384
    llm_kind: str = "mock"  # mock | remote
    llm_endpoint: str = ""
    llm_model: str = ""
    adapter_timeout: float = 60.0
    decay_mode: str = "threshold"
    decay_threshold: float = 0.05
    decay_seed: int = 0
    time_unit_hours: float = 24.0
    top_k: int = 6
    timezone: str = "UTC"
    language: str = "en"
    listen_host: str = "127.0.0.1"
    listen_port: int = 8300
    prompt_budget: int = 4000
    retention_weighting: bool = False

    def validate(self) -> None:
        problems: list[str] = []
        if self.embedder_kind not in ("hashing", "remote"):
            problems.append(f"embedder_kind: must be 'hashing' or 'remote', got {self.embedder_kind!r}")
        if self.embedder_kind == "remote" and not self.embedder_endpoint:
            problems.append("embedder_endpoint: required when embedder_kind = remote")
        if self.embedder_dim < 1:
            problems.append(f"embedder_dim: must be positive, got {self.embedder_dim}")
        if self.llm_kind not in ("mock", "remote"):
            problems.append(f"llm_kind: must be 'mock' or 'remote', got {self.llm_kind!r}")
        if self.llm_kind == "remote" and not self.llm_endpoint:
            problems.append("llm_endpoint: required when llm_kind = remote")
        if self.adapter_timeout <= 0:
            problems.append(f"adapter_timeout: must be positive, got {self.adapter_timeout}")
        if self.decay_mode not in ("threshold", "stochastic"):
            problems.append(f"decay_mode: must be 'threshold' or 'stochastic', got {self.decay_mode!r}")
        if not (0.0 <= self.decay_threshold <= 1.0):
            problems.append(f"decay_threshold: must be in [0, 1], got {self.decay_threshold}")
        if self.time_unit_hours <= 0:
            problems.append(f"time_unit_hours: must be positive, got {self.time_unit_hours}")
        if self.top_k < 1:
            problems.append(f"top_k: must be >= 1, got {self.top_k}")
        try:
            resolve_timezone(self.timezone)
        except Exception:
            problems.append(f"timezone: unknown zone {self.timezone!r}")
        if self.language not in SUPPORTED_LANGUAGES:
            problems.append(f"language: must be one of {SUPPORTED_LANGUAGES}, got {self.language!r}")
        if not (0 < self.listen_port < 65536):
            problems.append(f"listen_port: must be in (0, 65536), got {self.listen_port}")
        if self.prompt_budget < 100:
            problems.append(f"prompt_budget: must be >= 100, got {self.prompt_budget}")
        if problems:
            raise InvalidConfigError(problems)

    def decay_policy(self) -> DecayPolicy:
        return DecayPolicy(
            mode=self.decay_mode,
            threshold=self.decay_threshold,
            rng_seed=self.decay_seed,
            time_unit=dt.timedelta(hours=self.time_unit_hours),
        )


_BOOL_VALUES = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidConfigError([f"{source}:{lineno}: expected 'key = value', got {raw!r}"])
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def _coerce(name: str, kind: type, raw: str) -> object:
    if kind is bool:
        lowered = raw.lower()
        if lowered not in _BOOL_VALUES:
            raise InvalidConfigError([f"{name}: expected a boolean, got {raw!r}"])
        return _BOOL_VALUES[lowered]
    if kind is int:
        try:
            return int(raw)
        except ValueError:
            raise InvalidConfigError([f"{name}: expected an integer, got {raw!r}"]) from None
    if kind is float:
        try:
            return float(raw)
        except ValueError:
            raise InvalidConfigError([f"{name}: expected a number, got {raw!r}"]) from None
    return raw


def load_config(
    path: str | Path | None = None, overrides: dict[str, object] | None = None
) -> ServiceConfig:
    """Build a validated config from an optional file plus overrides."""
    config = ServiceConfig()
    known = {f.name: f for f in fields(ServiceConfig)}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InvalidConfigError([f"config file {path}: {exc}"]) from exc
        for key, raw in parse_config_text(text, str(path)).items():
            if key not in known:
                raise InvalidConfigError([f"{key}: unknown configuration key"])
            base_type = type(getattr(config, key)) if getattr(config, key) is not None else str
            setattr(config, key, _coerce(key, base_type, raw))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in known:
            raise InvalidConfigError([f"{key}: unknown configuration key"])
        setattr(config, key, value)
    config.validate()
    return config


def build_engine(config: ServiceConfig) -> MemoryBankEngine:
    """Wire adapters and policy from a validated config."""
    if config.embedder_kind == "remote":
        embedder = RemoteEmbedder(
            endpoint=config.embedder_endpoint,
            model=config.embedder_model,
            api_key=os.environ.get(EMBED_API_KEY_ENV),
            dim=config.embedder_dim,
        )
    else:
        embedder = HashingEmbedder(dim=config.embedder_dim)
    if config.llm_kind == "remote":
        llm = RemoteChatModel(
            endpoint=config.llm_endpoint,
            model=config.llm_model,
            api_key=os.environ.get(LLM_API_KEY_ENV),
            timeout=config.adapter_timeout,
        )
    else:
        llm = MockLanguageModel()
    return MemoryBankEngine(
        data_dir=config.data_dir,
        embedder=embedder,
        llm=llm,
        policy=config.decay_policy(),
        top_k=config.top_k,
        tz=resolve_timezone(config.timezone),
        language=config.language,
        prompt_budget=config.prompt_budget,
        retention_weighting=config.retention_weighting,
    )

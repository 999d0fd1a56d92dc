"""Gateway configuration: one JSON file, overridable through ``SEMGATE_*`` env vars.

An env var name is the dotted key uppercased with dots turned into
underscores, e.g. ``cache.threshold`` -> ``SEMGATE_CACHE_THRESHOLD``.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Dict, Iterator, Literal, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..ann_index import HnswParams

ENV_PREFIX = "SEMGATE_"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class UpstreamConfig(_Section):
    kind: Literal["remote", "mock"] = "mock"
    base_url: str = "https://api.openai.com/v1"
    api_key: str = ""
    mock_delay_ms: float = 0.0
    timeout_secs: float = 120.0


class EmbeddingConfig(_Section):
    kind: Literal["remote", "mock"] = "mock"
    base_url: str = "https://api.openai.com/v1"
    api_key: Optional[str] = None  # falls back to upstream.api_key
    model: str = "text-embedding-ada-002"
    dim: int = Field(default=64, ge=1)
    timeout_secs: float = 30.0


class CacheConfig(_Section):
    threshold: float = Field(default=0.8, ge=0.0, le=1.0)
    default_ttl_secs: int = Field(default=24 * 3600, ge=0)
    snapshot_path: Optional[str] = None
    purge_interval_secs: float = Field(default=60.0, gt=0)
    top_k: int = Field(default=5, ge=1)


class HnswConfig(_Section):
    m: int = Field(default=16, ge=2)
    ef_construction: int = Field(default=200, ge=1)
    ef_search: int = Field(default=128, ge=1)
    seed: int = 0

    def params(self) -> HnswParams:
        return HnswParams(m=self.m, ef_construction=self.ef_construction, ef_search=self.ef_search, seed=self.seed)


class GatewayConfig(_Section):
    listen: str = "127.0.0.1:8080"
    upstream: UpstreamConfig = Field(default_factory=UpstreamConfig)
    embedding: EmbeddingConfig = Field(default_factory=EmbeddingConfig)
    cache: CacheConfig = Field(default_factory=CacheConfig)
    hnsw: HnswConfig = Field(default_factory=HnswConfig)

    @field_validator("listen")
    @classmethod
    def _check_listen(cls, v: str) -> str:
        host, sep, port = v.rpartition(":")
        if not sep or not host or not port.isdigit():
            raise ValueError("listen must look like HOST:PORT")
        return v

    @property
    def host_port(self) -> Tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        return host, int(port)


def _leaf_keys(model: type[BaseModel], prefix: str = "") -> Iterator[Tuple[str, ...]]:
    for name, info in model.model_fields.items():
        ann = info.annotation
        if isinstance(ann, type) and issubclass(ann, BaseModel):
            for sub in _leaf_keys(ann):
                yield (name,) + sub
        else:
            yield (name,)


def env_overrides(env: Mapping[str, str]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for path in _leaf_keys(GatewayConfig):
        var = ENV_PREFIX + "_".join(path).upper()
        if var in env:
            node = out
            for key in path[:-1]:
                node = node.setdefault(key, {})
            node[path[-1]] = env[var]
    return out


def _merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(merged.get(k), dict):
            merged[k] = _merge(merged[k], v)
        else:
            merged[k] = v
    return merged


def load_config(path: Optional[str | Path] = None, env: Optional[Mapping[str, str]] = None) -> GatewayConfig:
    raw: Dict[str, Any] = {}
    if path is not None:
        raw = json.loads(Path(path).read_text())
    env = os.environ if env is None else env
    return GatewayConfig.model_validate(_merge(raw, env_overrides(env)))

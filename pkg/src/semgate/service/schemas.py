from __future__ import annotations

from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator


class Message(BaseModel):
    model_config = ConfigDict(extra="allow")

    role: str
    content: str


class ChatCompletionRequest(BaseModel):
    # unknown fields are kept and forwarded upstream on a miss
    model_config = ConfigDict(extra="allow")

    model: str = "default"
    messages: List[Message]

    @field_validator("messages")
    @classmethod
    def _check_messages(cls, v: List[Message]) -> List[Message]:
        if not v:
            raise ValueError("messages must be non-empty")
        if v[-1].role != "user":
            raise ValueError("last message must have role 'user'")
        if not v[-1].content.strip():
            raise ValueError("last user message is empty")
        return v


class AssistantMessage(BaseModel):
    role: str = "assistant"
    content: str


class Choice(BaseModel):
    index: int = 0
    message: AssistantMessage
    finish_reason: str = "stop"


class ChatCompletionResponse(BaseModel):
    id: str
    object: str = "chat.completion"
    created: int
    model: str
    choices: List[Choice]


class LatencyStats(BaseModel):
    mean: float
    p50: float
    p95: float


class LatencyBlock(BaseModel):
    hit: LatencyStats
    miss: LatencyStats


class PartitionInfo(BaseModel):
    dim: int
    entries: int


class StatsResponse(BaseModel):
    hits: int
    misses: int
    hit_rate: float
    entries: int
    tombstones: int
    partitions: List[PartitionInfo]
    latency: LatencyBlock
    threshold: float
    upstream_calls: int


class FlushResponse(BaseModel):
    removed: int


class ThresholdRequest(BaseModel):
    threshold: float


class ThresholdResponse(BaseModel):
    previous: float
    current: float


class EntryCreate(BaseModel):
    question: str = Field(min_length=1)
    response: str = Field(min_length=1)
    ttl: Optional[int] = Field(default=None, ge=0)


class EntryCreated(BaseModel):
    entry_id: int


class EntryInfo(BaseModel):
    entry_id: int
    question: str
    response: str
    created_at: int
    ttl: int


class ErrorResponse(BaseModel):
    error: str

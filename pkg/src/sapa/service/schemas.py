"""Request and response models for the HTTP service."""
from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, field_validator, model_validator


class MetricsRequest(BaseModel):
    labels: list[int]
    scores: list[float]
    threshold: float = 0.5

    @model_validator(mode="after")
    def _same_length(self):
        if len(self.labels) != len(self.scores):
            raise ValueError("labels and scores must have equal length")
        if not self.labels:
            raise ValueError("no rows")
        if any(v not in (0, 1) for v in self.labels):
            raise ValueError("labels must be 0/1")
        return self


class MetricsResponse(BaseModel):
    precision: float
    recall: float
    f1: float
    mcc: float
    pr_auc: float | None
    roc_auc: float | None
    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int
    flags: list[str]


class CompareRequest(BaseModel):
    baseline: list[float] = Field(min_length=2)
    treatment: list[float] = Field(min_length=2)
    alternative: Literal["greater", "less", "two-sided"] = "greater"

    @model_validator(mode="after")
    def _paired(self):
        if len(self.baseline) != len(self.treatment):
            raise ValueError("paired samples must have equal length")
        return self


class CompareResponse(BaseModel):
    wilcoxon_p: float
    cohens_d: float
    relative_improvement_pct: float
    formatted: str


class TravelerIn(BaseModel):
    person_id: str
    socio_demographics: dict
    spatial_profile_label: str = "unknown"
    spatial_embedding: list[float] = Field(default_factory=list)


class PersonaIn(BaseModel):
    person_id: str = ""
    primary_motivation: str
    behavioral_tags: list[str]
    brief_justification: str


class PromptOut(BaseModel):
    purpose: str
    temperature: float
    system_text: str
    user_text: str


class ParseRequest(BaseModel):
    raw: str
    person_id: str = ""


class PersonaOut(BaseModel):
    person_id: str
    primary_motivation: str
    behavioral_tags: list[str]
    brief_justification: str
    notes: list[str]


class LatentOut(BaseModel):
    person_id: str
    scores: dict[str, int]
    justifications: dict[str, str]


class InteractionRequest(BaseModel):
    scores: dict[str, float]
    trip: dict[str, float]


class AblationRequest(BaseModel):
    config: dict = Field(default_factory=dict)


class JobOut(BaseModel):
    job_id: str
    status: Literal["queued", "running", "done", "failed"]
    error: str | None = None
    summary: str | None = None
    report: dict | None = None

    @field_validator("job_id")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("empty job id")
        return v

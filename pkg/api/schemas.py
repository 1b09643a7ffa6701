"""
Pydantic Schemas for the DGFF Experiments API

Request and response models for all endpoints. Library report models are
returned as-is inside the run payloads.
"""

from typing import Any

from pydantic import BaseModel, Field


# --- Request Models ---

class ProfileRequest(BaseModel):
    """Inline step profile."""
    sigmas: list[float] = Field(..., min_length=1)
    lambdas: list[float] = Field(..., min_length=1)
    n_list: list[int] = Field(default_factory=lambda: [4, 6, 8, 10])
    strict: bool = False


# --- Response Models ---

class HealthResponse(BaseModel):
    """Health check response."""
    status: str = "healthy"
    version: str


class PresetItem(BaseModel):
    """A named profile."""
    name: str
    sigmas: list[float]
    lambdas: list[float]


class PresetsResponse(BaseModel):
    data: list[PresetItem]


class CentringRow(BaseModel):
    """Centring values at one grid size (None when n is too small)."""
    n: int
    m_N: float | None = None
    M_star: float | None = None


class ProfileResponse(BaseModel):
    """Normalized profile, its effective profile and centring table."""
    profile: dict[str, list[float]]
    effective: dict[str, Any]
    first_order: float
    table: list[CentringRow]


class RunResponse(BaseModel):
    """Stored experiment run."""
    run_id: str
    command: str
    passed: bool
    exit_code: int
    payload: dict[str, Any]
    table: list[dict[str, Any]] | None = None


class StatsResponse(BaseModel):
    total_runs: int


class ErrorResponse(BaseModel):
    """Error response."""
    success: bool = False
    message: str
    detail: str | None = None

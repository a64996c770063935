"""Request and response bodies for the HTTP endpoints.

Graph, vocabulary, parameter and config payloads travel as plain JSON
objects; the core parsers do the deep validation so the rules live in one
place. The models here pin the envelope: field names, defaults, and which
parts are optional.
"""

from pydantic import BaseModel, ConfigDict, Field


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EvaluateRequest(_Strict):
    predicted: list[dict]
    ground_truth: list[dict]
    vocabulary: dict | None = None
    iou_threshold: float = 0.5
    ks: list[int] = Field(default_factory=lambda: [50, 100])


class EvaluateResponse(_Strict):
    report: dict
    table: str


class PerturbRequest(_Strict):
    ground_truth: list[dict]
    vocabulary: dict
    targets: list[str] = Field(
        default_factory=lambda: ["without_relationships", "with_relationships", "both"]
    )
    ratios: list[float] = Field(default_factory=lambda: [0.2, 0.5, 1.0])
    seed: int = 0
    iou_threshold: float = 0.5
    ks: list[int] = Field(default_factory=lambda: [50, 100])


class PerturbResponse(_Strict):
    study: dict
    table: str


class PipelineRequest(_Strict):
    proposals: dict
    params: dict
    config: dict
    seed: int | None = None


class PipelineResponse(_Strict):
    graph: dict


class TrainRequest(_Strict):
    config: dict
    seed: int | None = None


class TrainResponse(_Strict):
    params: dict
    trajectory: list[dict]


class HealthResponse(_Strict):
    status: str
    version: str

"""Pydantic request/response models: the JSON surface of the service and CLI.

The experiment config is a single versioned document; the CLI loads it from
a file and may override individual fields with flags before validation.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator

CONFIG_SCHEMA_VERSION = 1


class SyntheticSpec(BaseModel):
    samples: int = Field(default=2000, ge=1)
    classes: int = Field(default=2, ge=2)
    width: int = Field(default=16, ge=1)
    positive_ratio: int = Field(default=1, ge=0)
    negative_ratio: int = Field(default=1, ge=0)
    separation: float = Field(default=2.0, gt=0)

    @model_validator(mode="after")
    def _ratio_nonzero(self):
        if self.positive_ratio + self.negative_ratio == 0:
            raise ValueError("positive and negative ratio cannot both be 0")
        return self


class DatasetConfig(BaseModel):
    source: Literal["idx", "csv", "synthetic"]
    images: Optional[str] = None
    labels: Optional[str] = None
    csv: Optional[str] = None
    label_column: str = "label"
    synthetic: Optional[SyntheticSpec] = None
    remap_every_other: bool = False
    val_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)
    limit: Optional[int] = Field(default=None, ge=1)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _source_fields(self):
        if self.source == "idx" and not (self.images and self.labels):
            raise ValueError("idx source requires 'images' and 'labels' paths")
        if self.source == "csv" and not self.csv:
            raise ValueError("csv source requires a 'csv' path")
        if self.source == "synthetic" and self.synthetic is None:
            self.synthetic = SyntheticSpec()
        return self


class NetworkSection(BaseModel):
    widths: list[int] = Field(default_factory=lambda: [64] * 8)
    kind: Literal["dense", "residual_dense"] = "dense"
    activation: Literal["relu", "none"] = "relu"


class GCSection(BaseModel):
    fraction: float = Field(gt=0.0, lt=1.0)
    alpha: float = Field(default=0.5, ge=0.0, lt=1.0)
    beta: float = Field(default=0.1, ge=0.0)
    gate_tap: Literal["pre_compression", "post_compression"] = "post_compression"
    gate_pool: int = Field(default=4, ge=1)
    phi_init: Literal["near_half", "all_pass"] = "near_half"


class TrainSection(BaseModel):
    epochs: int = Field(default=60, ge=1)
    batch_size: int = Field(default=128, ge=1)
    learning_rate: float = Field(default=0.01, gt=0)
    seed: int = Field(default=0, ge=0)
    mode: Literal["end_to_end", "two_stage", "gate_only", "compression_only"] = (
        "end_to_end"
    )
    two_stage_epochs: int = Field(default=1, ge=1)
    xi: float = Field(default=1e-4, ge=0)


class PolicySection(BaseModel):
    mode: Literal["independent", "incremental", "one_gate_only"] = "incremental"
    position: Optional[int] = Field(default=None, ge=0)
    threshold: float = Field(default=0.5, ge=0.0, le=1.0)


class ExperimentConfig(BaseModel):
    schema_version: int = CONFIG_SCHEMA_VERSION
    dataset: DatasetConfig
    network: NetworkSection = NetworkSection()
    gc_layers: list[GCSection] = Field(default_factory=list)
    train: TrainSection = TrainSection()
    policy: PolicySection = PolicySection()
    topology_path: Optional[str] = None
    stream: Optional["StreamSection"] = None
    output_dir: str = "out"

    @model_validator(mode="after")
    def _weights_normalizable(self):
        total = sum(g.alpha for g in self.gc_layers)
        if total >= 1.0:
            raise ValueError(
                f"sum of gate alphas is {total}; must stay below 1 so the "
                "final-loss weight is positive"
            )
        return self


class IslandSpec(BaseModel):
    name: str
    per_mac_cost: float = Field(default=1.0, ge=0)
    active_power_weight: float = Field(default=0.0, ge=0)


class LinkSpec(BaseModel):
    per_element_cost: float = Field(default=10.0, ge=0)
    per_bit_cost: float = Field(default=0.0, ge=0)


class TopologySpec(BaseModel):
    islands: list[IslandSpec]
    links: list[LinkSpec]


class StreamSection(BaseModel):
    total: int = Field(default=1000, ge=1)
    positive_ratio: int = Field(default=1, ge=0)
    negative_ratio: int = Field(default=9, ge=0)
    source: Literal["synthetic", "dataset"] = "synthetic"
    seed: int = Field(default=0, ge=0)


# -- requests/responses ----------------------------------------------------------


class TrainRequest(BaseModel):
    config: ExperimentConfig
    force: bool = False


class TrainResponse(BaseModel):
    model_path: str
    history_path: str
    epochs: int
    final_train_acc: float
    final_val_acc: Optional[float] = None
    metrics: dict


class EvalRequest(BaseModel):
    model_path: str
    dataset: DatasetConfig
    policy: PolicySection = PolicySection()
    split: Literal["all", "train", "val"] = "all"
    output_path: Optional[str] = None
    force: bool = False


class EvalResponse(BaseModel):
    metrics: dict
    output_path: Optional[str] = None


class RocRequest(BaseModel):
    model_path: str
    dataset: DatasetConfig
    gate_index: int = Field(default=0, ge=0)
    thresholds: Optional[list[float]] = None
    split: Literal["all", "train", "val"] = "all"
    output_path: Optional[str] = None
    force: bool = False


class RocResponse(BaseModel):
    auc: float
    num_points: int
    output_path: Optional[str] = None


class SweepRequest(BaseModel):
    config: ExperimentConfig
    alphas: list[float]
    betas: list[float]
    seeds: list[int] = Field(default_factory=lambda: [0])
    output_path: Optional[str] = None
    force: bool = False

    @model_validator(mode="after")
    def _nonempty(self):
        if not self.alphas or not self.betas or not self.seeds:
            raise ValueError("alphas, betas, and seeds must be non-empty")
        return self


class SweepRow(BaseModel):
    alpha: float
    beta: float
    accuracy: float
    gated_accuracy: float
    early_stopping: Optional[float] = None
    sparsity: float
    seeds: int


class SweepResponse(BaseModel):
    rows: list[SweepRow]
    output_path: Optional[str] = None


class SimulateRequest(BaseModel):
    model_path: str
    topology: Optional[TopologySpec] = None
    topology_path: Optional[str] = None
    stream: StreamSection = StreamSection()
    dataset: Optional[DatasetConfig] = None
    policy: PolicySection = PolicySection()
    output_path: Optional[str] = None
    force: bool = False

    @model_validator(mode="after")
    def _one_topology(self):
        if (self.topology is None) == (self.topology_path is None):
            raise ValueError("provide exactly one of 'topology' or 'topology_path'")
        if self.stream.source == "dataset" and self.dataset is None:
            raise ValueError("stream source 'dataset' requires a dataset section")
        return self


class SimulateResponse(BaseModel):
    report: dict
    equivalence_max_abs_diff: float
    output_path: Optional[str] = None


class ExportDeployRequest(BaseModel):
    model_path: str
    output_path: str
    force: bool = False


class ExportDeployResponse(BaseModel):
    output_path: str
    sizes: dict


class InferRequest(BaseModel):
    model_path: str
    samples: list[list[float]]
    policy: PolicySection = PolicySection()


class InferResponse(BaseModel):
    traces: list[dict]


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class ErrorInfo(BaseModel):
    type: str
    message: str
    exit_code: int


class ErrorResponse(BaseModel):
    error: ErrorInfo

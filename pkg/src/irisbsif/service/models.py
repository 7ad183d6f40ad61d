"""Request and response models for the pipeline service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

StrategyName = Literal["hist-raw", "hist-norm", "hd-mean", "hd-min", "hd-max"]


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorBody(BaseModel):
    category: str
    message: str


class ExtractPatchesRequest(BaseModel):
    manifest: str
    regions_dir: str
    out_dir: str
    sizes: Optional[list[int]] = None  # None selects the 12 standard sides
    per_region_count: int = Field(default=10, ge=0)
    seed: int = 0
    source_tag: Literal["annotation", "gaze", "random"] = "annotation"
    strict_dims: bool = False


class CorpusFileInfo(BaseModel):
    l: int
    count: int
    path: str


class ExtractPatchesResponse(BaseModel):
    corpora: list[CorpusFileInfo]
    regions_used: int
    regions_empty: int
    report_path: str


class TrainRequest(BaseModel):
    corpus: str
    out: str
    n: int = Field(ge=1, le=16)
    l: Optional[int] = None  # checked against the corpus when given
    seed: int = 0
    max_iterations: int = 200
    convergence_tolerance: float = 1e-4
    nonlinearity: Literal["log-cosh", "cube"] = "log-cosh"


class TrainedBankInfo(BaseModel):
    path: str
    n: int
    l: int
    iterations: int
    converged: bool
    whiteness_max_offdiag: float
    whiteness_max_diag_error: float


class TrainResponse(BaseModel):
    bank: TrainedBankInfo
    report_path: str


class TrainGridRequest(BaseModel):
    corpus_dir: str
    out_dir: str
    seed: int = 0
    max_iterations: int = 200
    convergence_tolerance: float = 1e-4
    nonlinearity: Literal["log-cosh", "cube"] = "log-cosh"
    jobs: int = Field(default=1, ge=1)


class TrainGridResponse(BaseModel):
    banks: list[TrainedBankInfo]
    report_path: str


class EncodeRequest(BaseModel):
    manifest: str
    bank: str
    out_dir: str


class EncodedTemplateInfo(BaseModel):
    image: str
    template: str


class EncodeFailure(BaseModel):
    image: str
    error: str


class EncodeResponse(BaseModel):
    templates: list[EncodedTemplateInfo]
    failures: list[EncodeFailure]
    report_path: str


class CompareRequest(BaseModel):
    template_a: str
    template_b: str
    strategy: StrategyName | Literal["all"] = "hd-mean"
    max_shift: int = Field(default=16, ge=0, lt=256)


class ScoreInfo(BaseModel):
    strategy: StrategyName
    value: float
    best_shift: Optional[int] = None
    valid_bits: Optional[int] = None


class CompareResponse(BaseModel):
    scores: list[ScoreInfo]
    fingerprint_match: bool


class EvalRequest(BaseModel):
    manifest: str
    out: str
    bank: Optional[str] = None  # single-bank mode
    banks_dir: Optional[str] = None  # grid mode: every *.bsf in the directory
    strategy: StrategyName | Literal["all"] = "hd-mean"
    seed: int = 0
    max_shift: int = Field(default=16, ge=0, lt=256)
    bootstrap: int = Field(default=0, ge=0)
    jobs: int = Field(default=1, ge=1)
    check_disjoint: list[str] = Field(default_factory=list)
    roc_csv: Optional[str] = None


class EvalResponse(BaseModel):
    report_path: str
    report: dict


class CompareMethodsRequest(BaseModel):
    report_a: str
    report_b: str
    permutations: int = Field(default=100_000, ge=1)
    seed: int = 0


class CompareMethodsResponse(BaseModel):
    statistic: float
    p_value: float
    n_a: int
    n_b: int

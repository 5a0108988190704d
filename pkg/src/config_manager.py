import yaml
import os
import logging
from typing import List, Dict, Any, Optional, Literal, Sequence, Tuple
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from src.errors import ConfigError
from src.rule_engine import DEFAULT_EASE_ORDER, DEFAULT_HARDEN_ORDER

logger = logging.getLogger(__name__)

WORKDIR_ENV = "QEII_WORKDIR"

# --- Pydantic Models for Configuration ---

class EmbeddingConfig(BaseModel):
    dim: int = Field(64, ge=1)
    margin: float = Field(1.0, gt=0)
    lr: float = Field(0.01, gt=0)
    alternations: int = Field(5, ge=1)
    epochs_per_segment: int = Field(20, ge=1)
    normalize_entities: bool = False
    max_retries: int = Field(100, ge=1)
    vocab_salt: str = Field("qeii-shared-salt", min_length=1, description="Secret shared by both parties only")

class EncoderConfig(BaseModel):
    hidden: int = Field(64, ge=1)
    self_loops: bool = False

class AnswerModelConfig(BaseModel):
    n_filters: int = Field(8, ge=1)
    width: int = Field(3, ge=1)
    leaky_slope: float = Field(0.01, ge=0)
    lr: float = Field(0.01, gt=0)
    epochs: int = Field(30, ge=1)
    patience: int = Field(5, ge=1)
    extra_negatives: int = Field(3, ge=0)
    adversarial_epochs: int = Field(1, ge=1)

class QuestionConfig(BaseModel):
    candidate_counts: List[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])
    subgraph_sizes: List[int] = Field(default_factory=lambda: [3, 4, 5, 6, 7, 8])
    steps_factor: int = Field(50, ge=1)
    max_restarts: int = Field(100, ge=1)
    max_retries: int = Field(200, ge=1)

    @field_validator("candidate_counts")
    @classmethod
    def _counts(cls, v: List[int]) -> List[int]:
        if not v or min(v) < 1:
            raise ValueError("candidate_counts must be non-empty with every count >= 1")
        return v

    @field_validator("subgraph_sizes")
    @classmethod
    def _sizes(cls, v: List[int]) -> List[int]:
        if not v or min(v) < 2:
            raise ValueError("subgraph_sizes must be non-empty with every size >= 2")
        return v

class TuningConfig(BaseModel):
    tuner: Literal["rule", "bayes", "retrieval"] = "rule"
    eta: Tuple[float, float] = (0.5, 0.52)
    gamma: float = Field(0.5, ge=0.0, le=1.0)
    joint_size: int = Field(1000, ge=1, description="Questions sampled for joint EM/AM training")
    round_size: int = Field(1000, ge=1)
    qb_size: int = Field(80000, ge=1)
    max_rounds: int = Field(50, ge=1)
    bayes_alpha: float = Field(1.0, ge=0.0)
    harden_order: List[str] = Field(default_factory=lambda: list(DEFAULT_HARDEN_ORDER))
    ease_order: List[str] = Field(default_factory=lambda: list(DEFAULT_EASE_ORDER))

    @model_validator(mode="after")
    def _check(self):
        lo, hi = self.eta
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError(f"eta must satisfy 0 <= lo < hi <= 1, got {self.eta}")
        if self.tuner != "rule" and self.qb_size < self.round_size:
            raise ValueError("qb_size must be at least round_size for the bayes and retrieval tuners")
        return self

class EvaluationConfig(BaseModel):
    repeat_sets: int = Field(10, ge=1)
    similarity_tolerance: float = Field(0.10, gt=0)
    tolerance_step: float = Field(0.05, gt=0)
    max_relaxations: int = Field(10, ge=0)
    pool_factor: int = Field(3, ge=1)
    common_questions: int = Field(1000, ge=1)
    common_repetitions: int = Field(10, ge=1)

class SeedsConfig(BaseModel):
    tm: int = 0
    alpha: int = 1
    beta: int = 2

class DuelConfig(BaseModel):
    embedding: EmbeddingConfig = Field(default_factory=EmbeddingConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    answer_model: AnswerModelConfig = Field(default_factory=AnswerModelConfig)
    questions: QuestionConfig = Field(default_factory=QuestionConfig)
    tuning: TuningConfig = Field(default_factory=TuningConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    seeds: SeedsConfig = Field(default_factory=SeedsConfig)

    @model_validator(mode="after")
    def _kernel_fits(self):
        if self.answer_model.width > self.embedding.dim:
            raise ValueError("answer_model.width must not exceed embedding.dim")
        return self

class PathsConfig(BaseModel):
    kg_alpha: str
    kg_beta: str
    workdir: str = "runs/duel"

    @field_validator("kg_alpha", "kg_beta")
    @classmethod
    def _exists(cls, v: str) -> str:
        if not os.path.isfile(v):
            raise ValueError(f"KG file not found: {v}")
        return v

class RunConfig(BaseModel):
    paths: PathsConfig
    duel: DuelConfig = Field(default_factory=DuelConfig)
    output_format: Literal["table", "json"] = "table"

# --- Config Manager Class ---

def _set_path(data: Dict[str, Any], dotted: str, value: Any) -> None:
    node = data
    keys = dotted.split(".")
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"Cannot override '{dotted}': '{key}' is not a section")
    node[keys[-1]] = value

def parse_override(item: str) -> Tuple[str, Any]:
    """`key.path=value`, the value parsed as YAML (so 0.5, [1, 2] and true work)."""
    if "=" not in item:
        raise ConfigError(f"Override '{item}' must look like key.path=value")
    key, raw = item.split("=", 1)
    try:
        return key.strip(), yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"Override '{item}' has an unparseable value: {e}")

class ConfigManager:
    """
    Manages loading and validating configuration.
    Overrides are applied on top of the file; QEII_WORKDIR beats both.
    """
    def __init__(self, config_path: str = "config/duel.yaml", overrides: Optional[Sequence[str]] = None):
        self.config_path = config_path
        self.overrides = list(overrides or [])
        self.config: Optional[RunConfig] = None
        self.reload()

    def reload(self):
        """Load and validate the configuration file."""
        if not os.path.exists(self.config_path):
            raise ConfigError(f"Config file not found: {self.config_path}")

        try:
            with open(self.config_path, 'r', encoding="utf-8") as f:
                raw_config = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            logger.error(f"Error parsing YAML: {e}")
            raise ConfigError(f"Error parsing {self.config_path}: {e}")
        if not isinstance(raw_config, dict):
            raise ConfigError(f"{self.config_path} must contain a mapping at the top level")

        for item in self.overrides:
            key, value = parse_override(item)
            _set_path(raw_config, key, value)

        env_workdir = os.environ.get(WORKDIR_ENV)
        if env_workdir:
            _set_path(raw_config, "paths.workdir", env_workdir)

        try:
            self.config = RunConfig(**raw_config)
            logger.info("Configuration loaded and validated successfully.")
        except (ValidationError, TypeError) as e:
            logger.error(f"Configuration validation error: {e}")
            raise ConfigError(f"Invalid configuration in {self.config_path}: {e}")

    def get_config(self) -> RunConfig:
        if not self.config:
            self.reload()
        return self.config

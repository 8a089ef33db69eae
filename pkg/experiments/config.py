"""
Experiment configuration
JSON documents mirroring ExperimentConfig; unknown fields are rejected
"""

from pathlib import Path
from typing import List, Optional, Tuple, Union
import json
import logging

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from discretization.decomposition import SplitMode
from discretization.grid import Stencil
from experiments.problems import ManufacturedProblem
from integrator.sampler import StrategySpec
from integrator.solver import SolverConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_DIR = Path(__file__).resolve().parent.parent / "data" / "configs"


class ConfigError(ValueError):
    """Unreadable or invalid experiment configuration"""


class ExperimentConfig(BaseModel):
    """One convergence experiment: problem, discretization, strategies and step sizes"""

    model_config = ConfigDict(extra="forbid")

    name: str = Field(default="experiment", description="Label used in logs and output files")
    problem: ManufacturedProblem = Field(default_factory=ManufacturedProblem)
    nodes: int = Field(default=41, ge=3, description="Grid nodes per axis")
    Mx: int = Field(default=3, ge=1, description="Subdomains along x")
    My: int = Field(default=1, ge=1, description="Subdomains along y")
    overlap: float = Field(default=0.2, ge=0.0, description="Width of each internal overlap band")
    split_mode: SplitMode = Field(default=SplitMode.SYMMETRIC)
    stencil: Stencil = Field(
        default=Stencil.CORNER, description="Gradient stencil of the p-Laplacian energy"
    )
    strategy: StrategySpec = Field(default_factory=StrategySpec)
    sweep: List[StrategySpec] = Field(
        default_factory=list, description="Strategies run by `convergence` instead of `strategy`"
    )
    step_sizes: List[float] = Field(..., min_length=1, description="Constant step sizes h")
    reps: int = Field(default=50, ge=1, description="Realizations per step size")
    seed: int = Field(default=0, ge=0)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    output: Optional[str] = Field(default=None, description="CSV output path")
    gnuplot: bool = Field(default=False, description="Also write (h, rel_error) files per strategy")
    fit_range: Optional[Tuple[float, float]] = Field(
        default=None, description="Inclusive (h_min, h_max) used for order fits"
    )

    @model_validator(mode="after")
    def _check_consistency(self):
        T = self.problem.T
        for h in self.step_sizes:
            if h <= 0.0:
                raise ValueError(f"step sizes must be positive, got {h}")
            n = round(T / h)
            if n < 1 or abs(n * h - T) > 1e-12 * max(1.0, T):
                raise ValueError(f"step size {h} does not divide T={T}")
        for strategy in self.strategies:
            if strategy.kind == "predictor" and (self.nodes - 1) % strategy.coarse_factor:
                raise ValueError(
                    f"coarse_factor {strategy.coarse_factor} does not divide {self.nodes - 1} cells"
                )
        if self.fit_range is not None and self.fit_range[0] > self.fit_range[1]:
            raise ValueError(f"fit_range must be (h_min, h_max), got {self.fit_range}")
        return self

    @property
    def strategies(self) -> List[StrategySpec]:
        return list(self.sweep) or [self.strategy]

    def with_overrides(self, seed: Optional[int] = None, reps: Optional[int] = None,
                       output: Optional[str] = None) -> "ExperimentConfig":
        updates = {}
        if seed is not None:
            updates["seed"] = seed
        if reps is not None:
            updates["reps"] = reps
        if output is not None:
            updates["output"] = output
        return parse_config({**self.model_dump(), **updates})


def parse_config(data: Union[str, bytes, dict]) -> ExperimentConfig:
    """
    Validate a config document

    Raises:
        ConfigError: Malformed JSON or invalid fields
    """
    try:
        if isinstance(data, dict):
            return ExperimentConfig.model_validate(data)
        return ExperimentConfig.model_validate_json(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid experiment config: {e}") from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Load an ExperimentConfig from a UTF-8 JSON file

    Relative names that do not exist are also looked up in data/configs.
    """
    path = Path(path)
    if not path.exists() and (DEFAULT_CONFIG_DIR / path).exists():
        path = DEFAULT_CONFIG_DIR / path
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Could not read config {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must be a JSON object")
    config = parse_config(data)
    logger.info(f"Loaded config '{config.name}' from {path}")
    return config

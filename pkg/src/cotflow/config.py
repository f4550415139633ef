"""Validated JSON run configurations for the command line."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .flow_model import TrainConfig
from .ode_sampler import IntegratorConfig

DatasetName = Literal["checkerboard", "moons", "circles", "swissroll", "lv"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrainSettings(_Strict):
    sigma: float = Field(1e-2, ge=0)
    epsilon: float = Field(1e-2, gt=0)
    batch_size: int = Field(512, ge=1)
    steps: int = Field(10_000, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    coupling: Literal["cot-exact", "cot-sinkhorn", "independent"] = "cot-exact"
    sinkhorn_reg: float = Field(1e-2, gt=0)
    width: int = Field(256, ge=1)
    depth: int = Field(4, ge=2)
    activation: Literal["selu", "elu", "tanh"] = "selu"
    full_plan_max: int = Field(4096, ge=0)

    def build(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.model_dump())


class IntegratorSettings(_Strict):
    method: Literal["euler", "rk4", "dopri"] = "rk4"
    steps: int = Field(100, ge=1)
    rtol: float = Field(1e-6, gt=0)
    atol: float = Field(1e-8, gt=0)

    def build(self) -> IntegratorConfig:
        return IntegratorConfig(**self.model_dump())


class MmdSettings(_Strict):
    bandwidth: Union[Literal["median"], float] = "median"
    estimator: Literal["biased", "unbiased"] = "biased"


class GenerateConfig(_Strict):
    dataset: DatasetName
    n: int = Field(ge=1)
    seed: int = 0


class TrainRunConfig(_Strict):
    data: str
    d_y: Optional[int] = Field(None, ge=1)
    log_transform: bool = False
    standardize: bool = True
    train: TrainSettings = TrainSettings()
    seed: int = 0


class SampleConfig(_Strict):
    checkpoint: str
    y: Optional[list[float]] = None
    y_file: Optional[str] = None
    n: int = Field(ge=0)
    log_transform: bool = False
    integrator: IntegratorSettings = IntegratorSettings()
    seed: int = 0

    @model_validator(mode="after")
    def _one_y_source(self):
        if (self.y is None) == (self.y_file is None):
            raise ValueError("give exactly one of 'y' or 'y_file'")
        return self


class EvalConfig(_Strict):
    samples: str
    reference: str
    metrics: list[Literal["w2", "mmd", "cw"]] = ["w2"]
    block: Literal["joint", "u"] = "joint"
    epsilon: float = Field(1e-6, gt=0)
    mmd: MmdSettings = MmdSettings()
    max_points: int = Field(5000, ge=1)
    seed: int = 0


class BenchmarkConfig(_Strict):
    name: Literal["2d", "lv"]
    dataset: Literal["checkerboard", "moons", "circles", "swissroll"] = "moons"
    methods: list[Literal["COT-FM", "FM"]] = ["COT-FM", "FM"]
    n_train: Optional[int] = Field(None, ge=2)
    n_test: int = Field(5000, ge=2)
    n_test_sets: int = Field(5, ge=1)
    n_post: int = Field(1000, ge=2)
    mcmc_chains: int = Field(32, ge=3)
    mcmc_burn_in: int = Field(5000, ge=0)
    mcmc_thin: int = Field(20, ge=1)
    train: TrainSettings = TrainSettings()
    integrator: IntegratorSettings = IntegratorSettings()
    mmd: MmdSettings = MmdSettings()
    seed: int = 0


class PlotConfig(_Strict):
    samples: str
    kind: Literal["scatter", "kde1d"] = "scatter"
    reference: Optional[str] = None
    column: str = "u0"
    x: str = "u0"
    y: str = "y0"
    title: Optional[str] = None
    filename: str = "plot.svg"
    seed: int = 0


COMMAND_CONFIGS = {
    "generate": GenerateConfig,
    "train": TrainRunConfig,
    "sample": SampleConfig,
    "eval": EvalConfig,
    "benchmark": BenchmarkConfig,
    "plot": PlotConfig,
}


def load_config(command: str, path, seed: int | None = None) -> BaseModel:
    """Parse and validate a JSON config; ``seed`` overrides the file's seed."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError("config must be a JSON object")
    if seed is not None:
        raw["seed"] = seed
    return COMMAND_CONFIGS[command].model_validate(raw)


def dump_config(cfg: BaseModel, path) -> None:
    Path(path).write_text(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")

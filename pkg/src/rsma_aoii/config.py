"""Experiment configuration: a single JSON-compatible document that is
validated, canonicalized, and hashed, so every output artifact can state
exactly which experiment produced it."""

from __future__ import annotations

import hashlib
import json
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .model import AoiiConfig


class AoiiSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")
    f: Literal["linear", "threshold"] = "linear"
    g: Literal["square", "threshold"] = "square"
    zeta: float = Field(default=0.0, ge=0.0)
    c: float = Field(default=0.0, ge=0.0)


class OptimizerOverrides(BaseModel):
    model_config = ConfigDict(extra="forbid")
    epsilon: float = Field(default=1e-4, gt=0.0)
    max_sca_iters: int = Field(default=100, ge=1)
    z_round_delta: float = Field(default=1e-3, gt=0.0, lt=0.5)
    solver_tol: float = Field(default=1e-7, gt=0.0)
    solver_max_iter: int = Field(default=200, ge=10)
    big_m: Optional[float] = Field(default=None, gt=0.0)


def parse_v_mode(v_mode: str, num_users: int) -> Tuple[str, object]:
    """Parse the age-draw mode string.

    "zero"            -> every user starts accurate
    "uniform:MAX"     -> ages drawn uniformly from {0, ..., MAX}
    "fixed:a,b,..."   -> one value per user
    """
    if v_mode == "zero":
        return "zero", None
    if v_mode.startswith("uniform:"):
        try:
            vmax = int(v_mode.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"v_mode: bad uniform bound in {v_mode!r}")
        if vmax < 0:
            raise ValueError("v_mode: uniform bound must be >= 0")
        return "uniform", vmax
    if v_mode.startswith("fixed:"):
        try:
            values = [int(s) for s in v_mode.split(":", 1)[1].split(",")]
        except ValueError:
            raise ValueError(f"v_mode: bad fixed values in {v_mode!r}")
        if len(values) != num_users:
            raise ValueError(f"v_mode: fixed list needs {num_users} values, got {len(values)}")
        if any(v < 0 for v in values):
            raise ValueError("v_mode: fixed values must be >= 0")
        return "fixed", values
    raise ValueError(f"v_mode: unknown mode {v_mode!r}")


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: Literal["geometric", "rayleigh"]
    N: int = Field(ge=1)
    K: int = Field(ge=1)
    theta: Optional[Union[float, List[float]]] = None  # geometric only
    snr_db: List[float]
    I_values: List[float]
    num_realizations: int = Field(default=1, ge=1)
    v_mode: str = "zero"
    aoii: AoiiSettings = AoiiSettings()
    modes: List[Literal["RSMA", "SDMA"]] = ["RSMA", "SDMA"]
    seed: int = Field(ge=0)
    num_slots: int = Field(default=1, ge=1)
    optimizer: OptimizerOverrides = OptimizerOverrides()
    jobs: int = Field(default=1, ge=1)

    @field_validator("snr_db", "I_values", "modes")
    @classmethod
    def _nonempty(cls, v, info):
        if not v:
            raise ValueError(f"{info.field_name} must not be empty")
        return v

    @field_validator("I_values")
    @classmethod
    def _positive_rates(cls, v):
        if any(x <= 0 for x in v):
            raise ValueError("I_values must all be > 0")
        return v

    @field_validator("modes")
    @classmethod
    def _unique_modes(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("modes must not repeat")
        return v

    @model_validator(mode="after")
    def _cross_checks(self):
        if self.scenario == "geometric":
            if self.theta is None:
                raise ValueError("theta is required for scenario=geometric")
            if isinstance(self.theta, float) or isinstance(self.theta, int):
                self.theta = [float(self.theta)]
            else:
                self.theta = [float(t) for t in self.theta]
            if not self.theta:
                raise ValueError("theta must not be empty")
            if self.K != 2:
                raise ValueError("scenario=geometric requires K=2")
        else:
            if self.theta is not None:
                raise ValueError("theta is only valid for scenario=geometric")
        parse_v_mode(self.v_mode, self.K)  # raises on malformed strings
        return self

    def aoii_config(self) -> AoiiConfig:
        return AoiiConfig(f_variant=self.aoii.f, g_variant=self.aoii.g,
                          zeta=self.aoii.zeta, c_thresh=self.aoii.c)


def canonical_json(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.model_dump(), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()

"""Experiment configuration schema.

One set of pydantic models backs the JSON config files, the CLI and the
service request bodies, so schema violations are reported identically
everywhere.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator


class PcrSettings(BaseModel):
    rank: Optional[int] = Field(default=None, ge=1)
    energy: float = Field(default=0.999, gt=0.0, le=1.0)


class DgpConfig(BaseModel):
    variant: Literal["general", "ltv", "lti"]
    n_actions: int = Field(ge=2)
    horizon: int = Field(ge=1)
    dim: int = Field(default=2, ge=1)
    n_periods: Optional[int] = None
    donors_per_set: int = Field(default=6, ge=1)
    n_control_donors: Optional[int] = Field(default=None, ge=1)
    n_targets: int = Field(default=4, ge=0)
    n_units: Optional[int] = Field(default=None, ge=1, description="random assignment only")
    assignment: Literal["structured", "random"] = "structured"
    archetypes: Optional[int] = Field(default=None, ge=1)
    shared_dynamics: bool = True
    sigma_state: float = Field(default=0.0, ge=0.0)
    sigma_outcome: float = Field(default=0.0, ge=0.0)
    seed: int = Field(default=0, ge=0)
    control_action: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "DgpConfig":
        if self.n_periods is not None:
            if not self.horizon <= self.n_periods <= 2 * self.horizon - 1:
                raise ValueError(
                    f"n_periods={self.n_periods} must lie in [horizon, 2*horizon-1] "
                    f"= [{self.horizon}, {2 * self.horizon - 1}]"
                )
        if self.control_action >= self.n_actions:
            raise ValueError("control_action outside [0, n_actions)")
        if self.assignment == "random":
            if self.variant != "lti":
                raise ValueError("random assignment is only generated from the 'lti' variant")
            if self.n_units is None:
                raise ValueError("random assignment needs an explicit n_units")
        return self


class EstimatorConfig(BaseModel):
    kind: Literal["si", "ltv", "lti"]
    weights: Literal["oracle", "pcr"] = "oracle"
    pcr: PcrSettings = PcrSettings()
    failure_policy: Literal["fail_fast", "record"] = "fail_fast"
    donor_audit: bool = False


class QueryConfig(BaseModel):
    sequences: Optional[list[list[int]]] = None
    n_random: int = Field(default=0, ge=0)
    distinct: bool = False
    seed: int = Field(default=7, ge=0)
    units: Optional[list[int]] = Field(
        default=None, description="units to evaluate; defaults to the design's targets"
    )


class SweepConfig(BaseModel):
    donors_per_set: list[int] = Field(min_length=1)
    sigma: list[float] = Field(min_length=1)
    replications: int = Field(default=1, ge=1)
    estimators: list[Literal["ltv", "lti"]] = ["ltv", "lti"]
    n_queries: int = Field(default=8, ge=1)


class ExperimentConfig(BaseModel):
    dgp: DgpConfig
    estimator: Optional[EstimatorConfig] = None
    query: QueryConfig = QueryConfig()
    sweep: Optional[SweepConfig] = None
    max_enum: int = Field(default=4096, ge=1)

    @model_validator(mode="after")
    def _compatible(self) -> "ExperimentConfig":
        est = self.estimator
        if est is not None:
            if est.kind == "lti" and self.dgp.variant != "lti":
                raise ValueError(
                    "the lag-based estimator requires a time-invariant control schedule; "
                    f"dgp variant {self.dgp.variant!r} does not provide one"
                )
            if est.kind == "ltv" and self.dgp.variant == "general":
                raise ValueError(
                    "the per-period blip estimator needs additive (ltv or lti) structure; "
                    "the general variant provides none"
                )
        if self.sweep is not None:
            if self.dgp.variant == "general":
                raise ValueError("sweeps are defined for the ltv/lti variants only")
            if est is not None and est.weights == "pcr":
                raise ValueError(
                    "sweeps clone donors at every deviation period, where no shared "
                    "control window exists; use oracle weights"
                )
        return self


def query_sequences_from_config(cfg: ExperimentConfig) -> list[tuple[int, ...]]:
    """Materialize the query list: explicit sequences plus random draws."""
    import numpy as np

    from .design import random_sequences

    out: list[tuple[int, ...]] = []
    if cfg.query.sequences:
        for seq in cfg.query.sequences:
            if len(seq) != cfg.dgp.horizon:
                raise ValueError(f"query sequence {seq} does not have length {cfg.dgp.horizon}")
            if any(not 0 <= a < cfg.dgp.n_actions for a in seq):
                raise ValueError(f"query sequence {seq} has actions outside [0, {cfg.dgp.n_actions})")
            out.append(tuple(int(a) for a in seq))
    if cfg.query.n_random:
        rng = np.random.default_rng([cfg.query.seed, 17])
        out.extend(
            random_sequences(
                cfg.dgp.n_actions,
                cfg.dgp.horizon,
                cfg.query.n_random,
                rng,
                distinct=cfg.query.distinct,
            )
        )
    return out

"""Linear donor weights: principal component regression and an oracle mode.

A weight vector ``beta`` expresses a target unit's latent factor as a
linear combination of its donors' factors.  Two routes are provided:

* :func:`pcr_fit` regresses shared-factor covariates through a truncated
  SVD: with ``X`` the (donors x covariates) matrix and ``X' = U S V'`` its
  transpose's SVD, ``beta = sum_{l<=k} s_l^{-1} v_l (u_l . x_target)``,
  i.e. the rank-``k`` pseudoinverse of ``X'`` applied to the target's
  covariates.
* :func:`oracle_weights` solves the minimum-norm least-squares problem on
  the true (simulated) stacked factors; a zero residual certifies that the
  target's factor lies in the donor span for this instance.

Weights are cached per (target, donor pattern) by the provider classes and
reused across periods and lags.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .donors import DonorSet
from .panel import Panel, first_deviation_time
from .simulate import GeneralFactors, LatentFactors, LtiFactors, LtvFactors


class CovariateWindowError(ValueError):
    """No shared control window exists; covariates must be supplied explicitly."""


@dataclass(frozen=True, eq=False)
class CovariateMatrix:
    donors: np.ndarray  # (|I|, p)
    target: np.ndarray  # (p,)

    def __post_init__(self):
        object.__setattr__(self, "donors", np.asarray(self.donors, dtype=float))
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float))
        if self.donors.ndim != 2 or self.target.ndim != 1:
            raise ValueError("donors must be 2-D and target 1-D")
        if self.donors.shape[1] != self.target.shape[0]:
            raise ValueError(
                f"covariate count mismatch: donors have {self.donors.shape[1]}, target {self.target.shape[0]}"
            )
        if self.donors.shape[1] < 1:
            raise ValueError("need at least one covariate")


@dataclass(frozen=True, eq=False)
class PcrConfig:
    """Rank selection: fixed ``rank`` when set, otherwise the smallest k
    whose singular values capture ``energy`` of the total spectrum energy.
    Singular values below ``sqrt(machine eps) * s_1`` never count toward the
    numerical rank."""

    rank: int | None = None
    energy: float = 0.999

    def __post_init__(self):
        if self.rank is not None and self.rank < 1:
            raise ValueError("fixed rank must be >= 1")
        if not 0 < self.energy <= 1:
            raise ValueError("energy fraction must be in (0, 1]")


@dataclass(frozen=True, eq=False)
class WeightVector:
    beta: np.ndarray
    rank: int
    singular_values: np.ndarray
    residual: float
    donors: DonorSet | None = None

    def __len__(self) -> int:
        return len(self.beta)


def _numerical_rank(s: np.ndarray) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 0
    cutoff = np.sqrt(np.finfo(float).eps) * s[0]
    return int(np.sum(s >= cutoff))


def pcr_fit(cov: CovariateMatrix, config: PcrConfig = PcrConfig(), donors: DonorSet | None = None) -> WeightVector:
    """Principal component regression of the target's covariates on donors'.

    A requested rank above the numerical rank is clamped (and reflected in
    the returned ``rank``); an all-zero covariate matrix is rejected.
    """
    xt = cov.donors.T  # (p, |I|)
    u, s, vt = np.linalg.svd(xt, full_matrices=False)
    r = _numerical_rank(s)
    if r == 0:
        raise ValueError("covariate matrix is all zeros; no directions to regress on")
    if config.rank is not None:
        k = min(config.rank, r)
    else:
        power = np.cumsum(s**2) / np.sum(s**2)
        k = int(np.searchsorted(power, config.energy - 1e-15) + 1)
        k = min(k, r)
    coeffs = (u[:, :k].T @ cov.target) / s[:k]
    beta = vt[:k].T @ coeffs
    residual = float(np.linalg.norm(xt @ beta - cov.target))
    return WeightVector(beta=beta, rank=k, singular_values=s, residual=residual, donors=donors)


def control_covariates(panel: Panel, donor_set: DonorSet, target: int) -> CovariateMatrix:
    """Outcomes over the longest control window shared by the target and all
    donors: periods ``1 .. p`` where ``p`` is the smallest pre-deviation run
    among them."""
    units = [target, *donor_set.members]
    runs = []
    for j in units:
        tstar = first_deviation_time(panel, j)
        runs.append(panel.n_periods if tstar is None else tstar - 1)
    p = min(runs)
    if p < 1:
        raise CovariateWindowError(
            f"no shared control window for target {target} and {donor_set.label()}; "
            "supply covariates explicitly"
        )
    return CovariateMatrix(
        donors=panel.outcomes[list(donor_set.members), :p],
        target=panel.outcomes[target, :p],
    )


def stacked_unit_factor(factors: LatentFactors, n: int, horizon: int) -> np.ndarray:
    """The unit factor the well-supported condition quantifies over: the raw
    vector (general), or the per-period / per-lag loadings concatenated."""
    if isinstance(factors, GeneralFactors):
        return np.asarray(factors.unit_factors[horizon - 1][n], dtype=float)
    if isinstance(factors, LtvFactors):
        return factors.response[n, horizon - 1, :horizon].reshape(-1)
    return factors.response[n, :horizon].reshape(-1)


def oracle_weights(
    factors: LatentFactors, target: int, donor_set: DonorSet, *, horizon: int
) -> WeightVector:
    """Minimum-norm least-squares weights on the true stacked factors.

    ``residual`` is the span defect; zero (up to floating point) certifies
    the well-supported condition for this (target, donor set) pair.
    """
    if not donor_set.members:
        raise ValueError(f"cannot solve weights for empty donor set {donor_set.label()}")
    D = np.stack([stacked_unit_factor(factors, j, horizon) for j in donor_set.members])  # (|I|, m)
    x = stacked_unit_factor(factors, target, horizon)
    beta, _, rank, s = np.linalg.lstsq(D.T, x, rcond=None)
    residual = float(np.linalg.norm(D.T @ beta - x))
    return WeightVector(
        beta=beta, rank=int(rank), singular_values=np.asarray(s), residual=residual, donors=donor_set
    )


class WeightsProvider(Protocol):
    def weights_for(self, target: int, donor_set: DonorSet) -> WeightVector: ...


class OracleWeights:
    """Weights from true factors; one pseudoinverse per donor pattern, shared
    across all targets."""

    def __init__(self, factors: LatentFactors, horizon: int):
        self.factors = factors
        self.horizon = int(horizon)
        self._pinv: dict[tuple, tuple[np.ndarray, np.ndarray, int, np.ndarray]] = {}
        self._cache: dict[tuple, WeightVector] = {}

    def _donor_pinv(self, donor_set: DonorSet):
        key = donor_set.key
        if key not in self._pinv:
            D = np.stack(
                [stacked_unit_factor(self.factors, j, self.horizon) for j in donor_set.members]
            )
            s = np.linalg.svd(D.T, compute_uv=False)
            rank = _numerical_rank(s)
            self._pinv[key] = (np.linalg.pinv(D.T), D.T, rank, s)
        return self._pinv[key]

    def weights_for(self, target: int, donor_set: DonorSet) -> WeightVector:
        key = (target, donor_set.key)
        if key not in self._cache:
            if not donor_set.members:
                raise ValueError(f"cannot solve weights for empty donor set {donor_set.label()}")
            pinv, dt, rank, s = self._donor_pinv(donor_set)
            x = stacked_unit_factor(self.factors, target, self.horizon)
            beta = pinv @ x
            residual = float(np.linalg.norm(dt @ beta - x))
            self._cache[key] = WeightVector(
                beta=beta,
                rank=rank,
                singular_values=s,
                residual=residual,
                donors=donor_set,
            )
        return self._cache[key]

    def max_residual(self, targets: Sequence[int], donor_sets: Sequence[DonorSet]) -> float:
        """Largest span defect over a collection of (target, donor set) pairs."""
        worst = 0.0
        for ds in donor_sets:
            for n in targets:
                worst = max(worst, self.weights_for(n, ds).residual)
        return worst

    def cached_weights(self) -> list[tuple[int, WeightVector]]:
        return [(target, wv) for (target, _), wv in self._cache.items()]


class PcrWeights:
    """Weights regressed from shared control-window outcomes."""

    def __init__(self, panel: Panel, config: PcrConfig = PcrConfig()):
        self.panel = panel
        self.config = config
        self._cache: dict[tuple, WeightVector] = {}

    def weights_for(self, target: int, donor_set: DonorSet) -> WeightVector:
        key = (target, donor_set.key)
        if key not in self._cache:
            cov = control_covariates(self.panel, donor_set, target)
            self._cache[key] = pcr_fit(cov, self.config, donors=donor_set)
        return self._cache[key]

    def cached_weights(self) -> list[tuple[int, WeightVector]]:
        return [(target, wv) for (target, _), wv in self._cache.items()]


def weights_to_text(weights: Sequence[tuple[int, WeightVector]]) -> str:
    """Audit dump: one row per (target, donor, beta) with fit diagnostics."""
    lines = ["target donor beta residual rank"]
    for target, wv in weights:
        members = wv.donors.members if wv.donors is not None else range(len(wv.beta))
        for j, b in zip(members, wv.beta):
            lines.append(f"{target} {j} {float(b)!r} {float(wv.residual)!r} {wv.rank}")
    return "\n".join(lines) + "\n"

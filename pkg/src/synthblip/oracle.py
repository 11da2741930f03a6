"""Ground-truth expected outcomes, blips and baselines from known factors.

These functions exist for simulated data, where the latent factors are
known exactly; there is deliberately no route from observed data to an
oracle value.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .panel import ActionSequence, ControlSchedule
from .simulate import GeneralFactors, LatentFactors, LtiFactors, LtvFactors


def counterfactual(factors: LatentFactors, n: int, sequence: Sequence[int]) -> float:
    """Expected outcome at period ``len(sequence)`` under ``sequence``."""
    seq = tuple(int(a) for a in sequence)
    t = len(seq)
    if isinstance(factors, GeneralFactors):
        return float(factors.unit_factors[t - 1][n] @ factors.sequence_vector(seq))
    w = factors.action_vectors
    if isinstance(factors, LtvFactors):
        return float(sum(factors.response[n, t - 1, ell - 1] @ w[seq[ell - 1]] for ell in range(1, t + 1)))
    return float(sum(factors.response[n, t - ell] @ w[seq[ell - 1]] for ell in range(1, t + 1)))


def blip(
    factors: LtvFactors | LtiFactors,
    n: int,
    t_or_lag: int,
    action: int,
    control: ControlSchedule,
    *,
    horizon: int | None = None,
) -> float:
    """Expected single-period effect of ``action`` versus the control action.

    For time-varying factors ``t_or_lag`` is the period the action is taken
    (``horizon`` fixes the outcome period); for time-invariant factors it is
    the lag between action and outcome.
    """
    w = factors.action_vectors
    if isinstance(factors, LtvFactors):
        if horizon is None:
            raise ValueError("time-varying blip needs the outcome horizon")
        t = t_or_lag
        return float(factors.response[n, horizon - 1, t - 1] @ (w[action] - w[control.at(t)]))
    if not control.is_time_invariant:
        raise ValueError("lag-indexed blip requires a time-invariant control schedule")
    lag = t_or_lag
    return float(factors.response[n, lag] @ (w[action] - w[control.at(1)]))


def baseline(
    factors: LtvFactors | LtiFactors, n: int, t: int, control: ControlSchedule
) -> float:
    """Expected outcome at period ``t`` had the unit stayed on the control
    schedule throughout."""
    w = factors.action_vectors
    if isinstance(factors, LtvFactors):
        return float(sum(factors.response[n, t - 1, ell - 1] @ w[control.at(ell)] for ell in range(1, t + 1)))
    return float(sum(factors.response[n, t - ell] @ w[control.at(ell)] for ell in range(1, t + 1)))


def telescoping_residual(
    factors: LtvFactors | LtiFactors,
    n: int,
    sequence: Sequence[int],
    control: ControlSchedule,
) -> float:
    """|counterfactual - (sum of blips + baseline)| for the full sequence.

    Algebraically zero for every instance; the returned value documents pure
    floating-point error.
    """
    seq = tuple(int(a) for a in sequence)
    T = len(seq)
    direct = counterfactual(factors, n, seq)
    if isinstance(factors, LtvFactors):
        blips = sum(blip(factors, n, t, seq[t - 1], control, horizon=T) for t in range(1, T + 1))
    else:
        blips = sum(blip(factors, n, T - t, seq[t - 1], control) for t in range(1, T + 1))
    return abs(direct - (blips + baseline(factors, n, T, control)))


@dataclass(frozen=True)
class OracleTable:
    """Expected outcomes keyed by (unit, sequence)."""

    values: dict[tuple[int, ActionSequence], float]
    coverage: str = "enumerated"

    def value(self, n: int, sequence: Sequence[int]) -> float:
        return self.values[(n, tuple(int(a) for a in sequence))]

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["unit", "sequence", "expected_outcome"])
            for (n, seq), val in self.values.items():
                writer.writerow([n, "-".join(str(a) for a in seq), repr(val)])


class EnumerationCapExceeded(ValueError):
    pass


def brute_force_table(
    factors: LatentFactors, horizon: int, n_actions: int, *, cap: int = 4096
) -> OracleTable:
    """Fully enumerate expected outcomes over all action sequences of length
    ``horizon`` for every unit, in lexicographic sequence order."""
    total = n_actions**horizon
    if total > cap:
        raise EnumerationCapExceeded(
            f"{n_actions}^{horizon} = {total} sequences exceeds cap {cap}; the sequence "
            "space grows exponentially in the horizon"
        )
    values: dict[tuple[int, ActionSequence], float] = {}
    for n in range(factors.n_units):
        for seq in itertools.product(range(n_actions), repeat=horizon):
            values[(n, seq)] = counterfactual(factors, n, seq)
    return OracleTable(values=values, coverage="enumerated")

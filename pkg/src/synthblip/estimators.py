"""Counterfactual estimators built on donor sets and linear weights.

Three strategies, in increasing structure / decreasing donor cost:

* ``estimate_si``: re-weight period-T outcomes of donors that received the
  exact query sequence.  Needs one donor group per sequence, i.e. on the
  order of ``n_actions ** horizon`` groups.
* ``fit_ltv`` / ``estimate_ltv``: backward recursion over periods.  Blip
  effects at period t are read off donors that deviate exactly at t, after
  subtracting baseline and later-period blips; everyone else gets a
  synthetic (weighted) combination.  Needs ``n_actions * horizon`` groups.
* ``fit_lti`` / ``estimate_lti``: forward recursion over lags.  A donor's
  deviation period is irrelevant, only the lag since deviation matters, so
  one donor group per action suffices (plus control groups).

Fitted entries come in exactly two flavours, mirroring the identities the
strategies rest on: "observed" entries are arithmetic over the donor's own
outcomes, and "synthetic" entries are weighted combinations of observed
ones.  Blips at the control action are pinned to zero identically (the
effect of control versus itself), which removes any donor requirement for
those slots and makes the all-control query reproduce the baseline exactly.

Tables fill lazily and are memoized; ``fill`` forces every entry for
harness-style exports.  Estimates are pure reads plus already-cached
weights, so queries can run concurrently once a fit is warm.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .donors import DonorIndex, DonorSet
from .panel import Panel
from .weights import WeightsProvider


class DonorDeficit(RuntimeError):
    """A required donor set is empty."""

    def __init__(self, donor_set: DonorSet, context: str = ""):
        self.donor_set = donor_set
        self.context = context
        msg = f"empty donor set {donor_set.label()}"
        if context:
            msg += f": {context}"
        super().__init__(msg)


class HorizonDeficit(RuntimeError):
    """A donor's lag recursion needs an outcome past the observation window."""

    def __init__(self, unit: int, needed_period: int, n_periods: int, horizon: int):
        self.unit = unit
        self.needed_period = needed_period
        super().__init__(
            f"unit {unit} needs its outcome at period {needed_period} but only "
            f"{n_periods} periods are observed; lag-based fitting generally "
            f"requires outcomes through 2*horizon-1 = {2 * horizon - 1}"
        )


@dataclass(frozen=True)
class CounterfactualEstimate:
    """An estimate plus its exact additive decomposition.

    ``value == baseline + sum(contributions)`` holds as an arithmetic
    identity (the value is computed from that sum, left to right).
    """

    value: float
    baseline: float
    contributions: tuple[float, ...]
    provenance: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class BaselineTable:
    """Estimated control-path outcomes; entries are NaN where never computed."""

    values: np.ndarray  # (N, P)
    computed: np.ndarray  # (N, P) bool

    def value(self, n: int, t: int) -> float:
        if not self.computed[n, t - 1]:
            raise KeyError(f"baseline not fitted for unit {n}, period {t}")
        return float(self.values[n, t - 1])

    def to_dict(self) -> dict:
        return {
            "layout": "[unit][period], period 1 at index 0",
            "values": self.values.tolist(),
            "computed": self.computed.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "BaselineTable":
        return cls(
            values=np.asarray(payload["values"], dtype=float),
            computed=np.asarray(payload["computed"], dtype=bool),
        )


@dataclass(frozen=True, eq=False)
class BlipTable:
    """Estimated blip effects, indexed by period (time-varying fits) or lag
    (time-invariant fits), always by action."""

    values: np.ndarray  # (N, T, A)
    computed: np.ndarray
    index: str  # "period" | "lag"

    def value(self, n: int, t_or_lag: int, action: int) -> float:
        k = t_or_lag - 1 if self.index == "period" else t_or_lag
        if not self.computed[n, k, action]:
            raise KeyError(f"blip not fitted for unit {n}, {self.index} {t_or_lag}, action {action}")
        return float(self.values[n, k, action])

    def to_dict(self) -> dict:
        axis = "period 1 at index 0" if self.index == "period" else "lag 0 at index 0"
        return {
            "layout": f"[unit][{self.index}][action], {axis}",
            "index": self.index,
            "values": self.values.tolist(),
            "computed": self.computed.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "BlipTable":
        return cls(
            values=np.asarray(payload["values"], dtype=float),
            computed=np.asarray(payload["computed"], dtype=bool),
            index=payload["index"],
        )


def _as_sequence(sequence: Sequence[int], horizon: int, n_actions: int) -> tuple[int, ...]:
    seq = tuple(int(a) for a in sequence)
    if len(seq) != horizon:
        raise ValueError(f"sequence length {len(seq)} != horizon {horizon}")
    bad = [a for a in seq if not 0 <= a < n_actions]
    if bad:
        raise ValueError(f"actions {bad} outside [0, {n_actions})")
    return seq


# ---------------------------------------------------------------------------
# Strategy 1: exact-sequence donors
# ---------------------------------------------------------------------------

def estimate_si(
    panel: Panel,
    donors: DonorIndex,
    weights: WeightsProvider,
    n: int,
    sequence: Sequence[int],
) -> CounterfactualEstimate:
    """Weighted period-T outcomes of units that received ``sequence`` exactly."""
    seq = _as_sequence(sequence, panel.horizon, panel.n_actions)
    ds = donors.sequence(seq)
    if not ds.members:
        raise DonorDeficit(
            ds,
            "no exogenous unit received this exact sequence; covering every "
            f"query requires on the order of n_actions**horizon = "
            f"{panel.n_actions ** panel.horizon} donor groups",
        )
    wv = weights.weights_for(n, ds)
    y = panel.outcomes[list(ds.members), panel.horizon - 1]
    value = float(np.dot(wv.beta, y))
    return CounterfactualEstimate(
        value=value,
        baseline=0.0,
        contributions=(value,),
        provenance=(f"weighted outcomes of {ds.label()} [{len(ds)} donors]",),
    )


# ---------------------------------------------------------------------------
# Strategy 2: per-period blips, backward in time
# ---------------------------------------------------------------------------

class LtvFit:
    """Baselines at the horizon plus per-(period, action) blip effects."""

    def __init__(self, panel: Panel, donors: DonorIndex, weights: WeightsProvider):
        if donors.panel is not panel:
            raise ValueError("donor index was built for a different panel")
        self.panel = panel
        self.donors = donors
        self.weights = weights
        T, A, N = panel.horizon, panel.n_actions, panel.n_units

        self._blips = np.zeros((N, T, A))
        self._have = np.zeros((N, T, A), dtype=bool)
        self._busy: set[tuple[int, int, int]] = set()
        self._member_sets: dict[tuple, frozenset[int]] = {}
        self._donor_vals: dict[tuple[int, int], np.ndarray] = {}
        self._control_actions = tuple(panel.control.at(t) for t in range(1, T + 1))

        control_set = donors.control_through(T)
        if not control_set.members:
            raise DonorDeficit(control_set, "baselines need units under control through the horizon")
        self._control_set = control_set
        self._control_y = panel.outcomes[list(control_set.members), T - 1]
        self._baseline = np.zeros(N)
        self._base_have = np.zeros(N, dtype=bool)
        self._base_synthetic = np.zeros(N, dtype=bool)

    def _members(self, ds: DonorSet) -> frozenset[int]:
        if ds.key not in self._member_sets:
            self._member_sets[ds.key] = frozenset(ds.members)
        return self._member_sets[ds.key]

    def baseline(self, n: int) -> float:
        """Estimated control-path outcome at the horizon."""
        if not self._base_have[n]:
            if n in self._members(self._control_set):
                val = float(self.panel.outcomes[n, self.panel.horizon - 1])
            else:
                wv = self.weights.weights_for(n, self._control_set)
                val = float(np.dot(wv.beta, self._control_y))
                self._base_synthetic[n] = True
            self._baseline[n] = val
            self._base_have[n] = True
        return float(self._baseline[n])

    def blip(self, n: int, t: int, action: int) -> float:
        """Estimated effect of ``action`` at period ``t`` on the horizon
        outcome, relative to the control action at ``t``."""
        T = self.panel.horizon
        if not 1 <= t <= T:
            raise ValueError(f"period {t} outside [1, {T}]")
        if action == self._control_actions[t - 1]:
            return 0.0
        if self._have[n, t - 1, action]:
            return float(self._blips[n, t - 1, action])
        key = (n, t, action)
        if key in self._busy:
            raise RuntimeError(f"blip dependency cycle at unit={n}, t={t}, action={action}")
        self._busy.add(key)
        try:
            ds = self.donors.action_at(action, t)
            if n in self._members(ds):
                later = 0.0
                for ell in range(t + 1, T + 1):
                    later += self.blip(n, ell, int(self.panel.actions[n, ell - 1]))
                val = float(self.panel.outcomes[n, T - 1]) - self.baseline(n) - later
            else:
                if not ds.members:
                    raise DonorDeficit(
                        ds,
                        f"needed for unit {n}; this strategy requires one donor group per "
                        f"(action, period) pair, on the order of n_actions*horizon = "
                        f"{self.panel.n_actions * T} groups",
                    )
                wv = self.weights.weights_for(n, ds)
                val = float(np.dot(wv.beta, self._donor_values(ds, t, action)))
        finally:
            self._busy.discard(key)
        self._blips[n, t - 1, action] = val
        self._have[n, t - 1, action] = True
        return val

    def _donor_values(self, ds: DonorSet, t: int, action: int) -> np.ndarray:
        """Observed entries of every donor in ``ds``, as one cached vector."""
        key = (t, action)
        if key not in self._donor_vals:
            self._donor_vals[key] = np.array([self.blip(j, t, action) for j in ds.members])
        return self._donor_vals[key]

    def fill(self) -> None:
        """Force every baseline and every (unit, period, action) entry,
        strictly descending in t."""
        for n in range(self.panel.n_units):
            self.baseline(n)
        for t in range(self.panel.horizon, 0, -1):
            for a in range(self.panel.n_actions):
                if a == self.panel.control.at(t):
                    continue
                for n in range(self.panel.n_units):
                    self.blip(n, t, a)

    def estimate(self, n: int, sequence: Sequence[int]) -> CounterfactualEstimate:
        seq = _as_sequence(sequence, self.panel.horizon, self.panel.n_actions)
        base = self.baseline(n)
        contribs = []
        prov = [
            "baseline: "
            + ("synthetic from " if self._base_synthetic[n] else "observed member of ")
            + self._control_set.label()
        ]
        for t, a in enumerate(seq, start=1):
            contribs.append(self.blip(n, t, a))
            prov.append(self._slot_provenance(n, t, a))
        value = base
        for c in contribs:
            value += c
        return CounterfactualEstimate(
            value=value,
            baseline=base,
            contributions=tuple(contribs),
            provenance=tuple(prov),
        )

    def _slot_provenance(self, n: int, t: int, a: int) -> str:
        if a == self.panel.control.at(t):
            return f"t={t}: control action, blip pinned to 0"
        ds = self.donors.action_at(a, t)
        role = "observed member of" if n in self._members(ds) else "synthetic from"
        return f"t={t} a={a}: {role} {ds.label()} [{len(ds)} donors]"

    @property
    def baseline_table(self) -> BaselineTable:
        values = np.full((self.panel.n_units, self.panel.n_periods), np.nan)
        computed = np.zeros_like(values, dtype=bool)
        values[self._base_have, self.panel.horizon - 1] = self._baseline[self._base_have]
        computed[:, self.panel.horizon - 1] = self._base_have
        return BaselineTable(values=values, computed=computed)

    @property
    def blip_table(self) -> BlipTable:
        return BlipTable(values=self._blips.copy(), computed=self._have.copy(), index="period")


def fit_ltv(
    panel: Panel,
    donors: DonorIndex,
    weights: WeightsProvider,
    *,
    eager: bool = False,
) -> LtvFit:
    fit = LtvFit(panel, donors, weights)
    if eager:
        fit.fill()
    return fit


def estimate_ltv(fit: LtvFit, n: int, sequence: Sequence[int]) -> CounterfactualEstimate:
    return fit.estimate(n, sequence)


# ---------------------------------------------------------------------------
# Strategy 3: per-lag blips, forward in lag
# ---------------------------------------------------------------------------

class LtiFit:
    """Baselines at every needed period plus per-(lag, action) blip effects."""

    def __init__(self, panel: Panel, donors: DonorIndex, weights: WeightsProvider):
        if donors.panel is not panel:
            raise ValueError("donor index was built for a different panel")
        if not panel.control.is_time_invariant:
            raise ValueError("lag-based fitting requires a time-invariant control schedule")
        self.panel = panel
        self.donors = donors
        self.weights = weights
        self.control_action = panel.control.at(1)
        T, A, N, P = panel.horizon, panel.n_actions, panel.n_units, panel.n_periods

        self._base = np.zeros((N, P))
        self._base_have = np.zeros((N, P), dtype=bool)
        self._blips = np.zeros((N, T, A))
        self._have = np.zeros((N, T, A), dtype=bool)
        self._busy: set[tuple] = set()
        self._member_sets: dict[tuple, frozenset[int]] = {}
        self._donor_vals: dict[tuple[int, int], np.ndarray] = {}

    def _members(self, ds: DonorSet) -> frozenset[int]:
        if ds.key not in self._member_sets:
            self._member_sets[ds.key] = frozenset(ds.members)
        return self._member_sets[ds.key]

    def baseline(self, n: int, t: int) -> float:
        """Estimated control-path outcome at period ``t`` (any observed period)."""
        if not 1 <= t <= self.panel.n_periods:
            raise ValueError(f"period {t} outside [1, {self.panel.n_periods}]")
        if self._base_have[n, t - 1]:
            return float(self._base[n, t - 1])
        ds = self.donors.control_through(t)
        if n in self._members(ds):
            val = float(self.panel.outcomes[n, t - 1])
        else:
            if not ds.members:
                raise DonorDeficit(ds, f"baseline at period {t} needed for unit {n}")
            wv = self.weights.weights_for(n, ds)
            donor_y = self.panel.outcomes[list(ds.members), t - 1]
            val = float(np.dot(wv.beta, donor_y))
        self._base[n, t - 1] = val
        self._base_have[n, t - 1] = True
        return val

    def blip(self, n: int, lag: int, action: int) -> float:
        """Estimated effect of ``action`` on the outcome ``lag`` periods later,
        relative to the control action."""
        T = self.panel.horizon
        if not 0 <= lag < T:
            raise ValueError(f"lag {lag} outside [0, {T - 1}]")
        if action == self.control_action:
            return 0.0
        if self._have[n, lag, action]:
            return float(self._blips[n, lag, action])
        key = (n, lag, action)
        if key in self._busy:
            raise RuntimeError(f"blip dependency cycle at unit={n}, lag={lag}, action={action}")
        self._busy.add(key)
        try:
            ds = self.donors.first_action(action)
            if n in self._members(ds):
                tstar = self.donors.first_deviation[n]
                assert tstar is not None
                t_out = tstar + lag
                if t_out > self.panel.n_periods:
                    raise HorizonDeficit(n, t_out, self.panel.n_periods, T)
                earlier = 0.0
                for q in range(lag):
                    a_q = int(self.panel.actions[n, tstar + lag - q - 1])
                    earlier += self.blip(n, q, a_q)
                val = float(self.panel.outcomes[n, t_out - 1]) - self.baseline(n, t_out) - earlier
            else:
                if not ds.members:
                    raise DonorDeficit(
                        ds,
                        f"needed for unit {n}; this strategy requires one donor group per "
                        f"action plus the control groups (n_actions + 1 = "
                        f"{self.panel.n_actions + 1} families)",
                    )
                wv = self.weights.weights_for(n, ds)
                val = float(np.dot(wv.beta, self._donor_values(ds, lag, action)))
        finally:
            self._busy.discard(key)
        self._blips[n, lag, action] = val
        self._have[n, lag, action] = True
        return val

    def _donor_values(self, ds: DonorSet, lag: int, action: int) -> np.ndarray:
        """Observed entries of every donor in ``ds``, as one cached vector."""
        key = (lag, action)
        if key not in self._donor_vals:
            self._donor_vals[key] = np.array([self.blip(j, lag, action) for j in ds.members])
        return self._donor_vals[key]

    def fill(self) -> None:
        """Force every (unit, lag, action) entry, strictly ascending in lag."""
        for lag in range(self.panel.horizon):
            for a in range(self.panel.n_actions):
                if a == self.control_action:
                    continue
                for n in range(self.panel.n_units):
                    self.blip(n, lag, a)

    def estimate(self, n: int, sequence: Sequence[int]) -> CounterfactualEstimate:
        seq = _as_sequence(sequence, self.panel.horizon, self.panel.n_actions)
        T = self.panel.horizon
        base = self.baseline(n, T)
        contribs = []
        prov = [f"baseline at horizon from {self.donors.control_through(T).label()}"]
        for t, a in enumerate(seq, start=1):
            contribs.append(self.blip(n, T - t, a))
            prov.append(self._slot_provenance(n, T - t, a, t))
        value = base
        for c in contribs:
            value += c
        return CounterfactualEstimate(
            value=value,
            baseline=base,
            contributions=tuple(contribs),
            provenance=tuple(prov),
        )

    def _slot_provenance(self, n: int, lag: int, a: int, t: int) -> str:
        if a == self.control_action:
            return f"t={t} (lag {lag}): control action, blip pinned to 0"
        ds = self.donors.first_action(a)
        role = "observed member of" if n in self._members(ds) else "synthetic from"
        return f"t={t} (lag {lag}) a={a}: {role} {ds.label()} [{len(ds)} donors]"

    @property
    def baseline_table(self) -> BaselineTable:
        values = np.where(self._base_have, self._base, np.nan)
        return BaselineTable(values=values, computed=self._base_have.copy())

    @property
    def blip_table(self) -> BlipTable:
        return BlipTable(values=self._blips.copy(), computed=self._have.copy(), index="lag")


def fit_lti(
    panel: Panel,
    donors: DonorIndex,
    weights: WeightsProvider,
    *,
    eager: bool = False,
) -> LtiFit:
    fit = LtiFit(panel, donors, weights)
    if eager:
        fit.fill()
    return fit


def estimate_lti(fit: LtiFit, n: int, sequence: Sequence[int]) -> CounterfactualEstimate:
    return fit.estimate(n, sequence)


# ---------------------------------------------------------------------------
# Conservation checks
# ---------------------------------------------------------------------------
# Each observed entry was computed as `outcome - baseline - sum(other blips)`
# with a fixed accumulation order; re-evaluating the same expression must
# reproduce it bit for bit.  Any nonzero residual is a defect, not noise.

def ltv_conservation_violations(fit: LtvFit) -> list[tuple[int, int, int, float]]:
    """(unit, period, action, residual) for every fitted observed entry whose
    recursion identity fails exactly."""
    out = []
    panel, T = fit.panel, fit.panel.horizon
    for t in range(1, T + 1):
        for a in range(panel.n_actions):
            if a == panel.control.at(t):
                continue
            ds = fit.donors.action_at(a, t)
            for j in ds.members:
                if not fit._have[j, t - 1, a]:
                    continue
                later = 0.0
                for ell in range(t + 1, T + 1):
                    later += fit.blip(j, ell, int(panel.actions[j, ell - 1]))
                resid = (float(panel.outcomes[j, T - 1]) - fit.baseline(j) - later) - fit.blip(j, t, a)
                if resid != 0.0:
                    out.append((j, t, a, resid))
    return out


def lti_conservation_violations(fit: LtiFit) -> list[tuple[int, int, int, float]]:
    """(unit, lag, action, residual) analogue for lag-indexed fits."""
    out = []
    panel, T = fit.panel, fit.panel.horizon
    for a in range(panel.n_actions):
        if a == fit.control_action:
            continue
        ds = fit.donors.first_action(a)
        for j in ds.members:
            tstar = fit.donors.first_deviation[j]
            assert tstar is not None
            for lag in range(T):
                if not fit._have[j, lag, a]:
                    continue
                t_out = tstar + lag
                earlier = 0.0
                for q in range(lag):
                    earlier += fit.blip(j, q, int(panel.actions[j, tstar + lag - q - 1]))
                resid = (
                    float(panel.outcomes[j, t_out - 1]) - fit.baseline(j, t_out) - earlier
                ) - fit.blip(j, lag, a)
                if resid != 0.0:
                    out.append((j, lag, a, resid))
    return out

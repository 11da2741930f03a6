"""Donor sets: units whose observed action prefix matches a required pattern.

Membership always combines two conditions: (i) the observed prefix matches
the pattern, and (ii) the unit's declared exogeneity covers the matched
prefix.  Condition (ii) is taken from ``Panel.exogenous_until`` and never
inferred, because it is a statement about potential outcomes that realized
data cannot test.

Never-treated units (no deviation within the observation window) belong to
every control set and to no action set.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .panel import Panel, first_deviation_time, observed_sequence


@dataclass(frozen=True)
class DonorSet:
    """A donor pattern plus the sorted units matching it.

    kind is one of:
      * ``sequence``        -- exact full-horizon action sequence (uses ``sequence``)
      * ``action_at``       -- control prefix, then ``action`` at period ``time``
      * ``control_through`` -- control prefix through period ``time``
      * ``first_action``    -- first deviation is ``action``, whenever it happens
    """

    kind: str
    members: tuple[int, ...]
    sequence: tuple[int, ...] = ()
    action: int = -1
    time: int = 0

    @property
    def key(self) -> tuple:
        """Identity of the pattern (excludes members); cache key for weights."""
        return (self.kind, self.sequence, self.action, self.time)

    def label(self) -> str:
        if self.kind == "sequence":
            return "sequence(" + "-".join(str(a) for a in self.sequence) + ")"
        if self.kind == "action_at":
            return f"action_at(a={self.action}, t={self.time})"
        if self.kind == "control_through":
            return f"control_through(t={self.time})"
        return f"first_action(a={self.action})"

    def __len__(self) -> int:
        return len(self.members)


def si_donors(panel: Panel, sequence: Sequence[int]) -> DonorSet:
    """Units that received exactly ``sequence`` over periods 1..horizon,
    with exogeneity declared through the horizon."""
    seq = tuple(int(a) for a in sequence)
    T = panel.horizon
    if len(seq) != T:
        raise ValueError(f"sequence length {len(seq)} != horizon {T}")
    members = [
        j
        for j in range(panel.n_units)
        if observed_sequence(panel, j, T) == seq and panel.exogenous_until[j] >= T
    ]
    return DonorSet(kind="sequence", members=tuple(members), sequence=seq)


def ltv_action_donors(panel: Panel, action: int, t: int) -> DonorSet:
    """Units under control through ``t - 1`` that receive ``action`` at ``t``,
    exogenous through ``t``."""
    if not 1 <= t <= panel.horizon:
        raise ValueError(f"period {t} outside [1, {panel.horizon}]")
    pattern = panel.control.prefix(t - 1) + (int(action),)
    members = [
        j
        for j in range(panel.n_units)
        if observed_sequence(panel, j, t) == pattern and panel.exogenous_until[j] >= t
    ]
    return DonorSet(kind="action_at", members=tuple(members), action=int(action), time=t)


def control_donors(panel: Panel, t: int) -> DonorSet:
    """Units still following the control schedule through ``t`` (first
    deviation absent or later than ``t``), exogenous through ``t``."""
    if not 1 <= t <= panel.n_periods:
        raise ValueError(f"period {t} outside [1, {panel.n_periods}]")
    members = []
    for j in range(panel.n_units):
        tstar = first_deviation_time(panel, j)
        if (tstar is None or tstar > t) and panel.exogenous_until[j] >= t:
            members.append(j)
    return DonorSet(kind="control_through", members=tuple(members), time=t)


def lti_action_donors(panel: Panel, action: int, *, require_immediate: bool = False) -> DonorSet:
    """Units whose first departure from control is ``action``, at any period,
    exogenous through their deviation period.

    ``require_immediate`` keeps only units deviating at period 1, for which
    membership imposes no exogeneity condition at all.
    """
    if not panel.control.is_time_invariant:
        raise ValueError("first-action donor sets require a time-invariant control schedule")
    members = []
    for j in range(panel.n_units):
        tstar = first_deviation_time(panel, j)
        if tstar is None or panel.actions[j, tstar - 1] != action:
            continue
        if require_immediate and tstar != 1:
            continue
        if panel.exogenous_until[j] >= tstar:
            members.append(j)
    return DonorSet(kind="first_action", members=tuple(members), action=int(action))


class DonorIndex:
    """Materializes and caches donor sets for one panel."""

    def __init__(self, panel: Panel):
        self.panel = panel
        self._cache: dict[tuple, DonorSet] = {}
        self.first_deviation: tuple[int | None, ...] = tuple(
            first_deviation_time(panel, j) for j in range(panel.n_units)
        )

    def _get(self, key: tuple, build) -> DonorSet:
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def sequence(self, sequence: Sequence[int]) -> DonorSet:
        seq = tuple(int(a) for a in sequence)
        return self._get(("sequence", seq, -1, 0), lambda: si_donors(self.panel, seq))

    def action_at(self, action: int, t: int) -> DonorSet:
        return self._get(
            ("action_at", (), int(action), int(t)),
            lambda: ltv_action_donors(self.panel, action, t),
        )

    def control_through(self, t: int) -> DonorSet:
        return self._get(("control_through", (), -1, int(t)), lambda: control_donors(self.panel, t))

    def first_action(self, action: int, *, require_immediate: bool = False) -> DonorSet:
        return self._get(
            ("first_action", (), int(action), int(require_immediate)),
            lambda: lti_action_donors(self.panel, action, require_immediate=require_immediate),
        )


def donor_sets_to_text(sets: Iterable[DonorSet]) -> str:
    """Line-oriented dump: one header line per set, then its member indices."""
    lines = []
    for ds in sets:
        lines.append(f"# {ds.label()} [{len(ds)} members]")
        lines.append(" ".join(str(j) for j in ds.members))
    return "\n".join(lines) + "\n"


def write_donor_sets(sets: Iterable[DonorSet], path: str | Path) -> None:
    Path(path).write_text(donor_sets_to_text(sets))

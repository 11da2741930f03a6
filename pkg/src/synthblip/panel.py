"""Panel data model: outcomes, action histories and control schedules.

Conventions used throughout the package:

* units are indexed ``0 .. n_units - 1``,
* time is 1-indexed in every public interface (period ``t`` lives in
  ``[1, n_periods]``); internal arrays store period ``t`` at column ``t - 1``,
* actions are categorical ids in ``[0, n_actions)``.

All types are immutable after construction and every operation here is a
pure function, so unrestricted concurrent reads are safe.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ActionSequence = tuple[int, ...]


class PanelValidationError(ValueError):
    """Raised when a panel violates its structural invariants."""

    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        lines = "; ".join(str(v) for v in violations[:8])
        more = "" if len(violations) <= 8 else f" (+{len(violations) - 8} more)"
        super().__init__(f"panel failed validation: {lines}{more}")


@dataclass(frozen=True)
class Violation:
    """One validation failure, with (unit, time) coordinates when they apply."""

    code: str
    detail: str
    unit: int | None = None
    time: int | None = None

    def __str__(self) -> str:
        where = ""
        if self.unit is not None:
            where = f" at unit={self.unit}" + (f", t={self.time}" if self.time is not None else "")
        return f"{self.code}{where}: {self.detail}"


@dataclass(frozen=True)
class ControlSchedule:
    """The control action per period.

    Either ``actions`` (one action per period, time-varying) or ``action``
    (a single action repeated every period, time-invariant) is set, never
    both.
    """

    actions: tuple[int, ...] | None = None
    action: int | None = None

    def __post_init__(self) -> None:
        if (self.actions is None) == (self.action is None):
            raise ValueError("provide exactly one of `actions` (time-varying) or `action` (time-invariant)")
        if self.actions is not None:
            object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))

    @classmethod
    def time_varying(cls, actions: Sequence[int]) -> "ControlSchedule":
        return cls(actions=tuple(int(a) for a in actions))

    @classmethod
    def time_invariant(cls, action: int) -> "ControlSchedule":
        return cls(action=int(action))

    @property
    def is_time_invariant(self) -> bool:
        return self.action is not None

    def at(self, t: int) -> int:
        """Control action for period ``t`` (1-indexed)."""
        if t < 1:
            raise IndexError(f"period {t} out of range (time is 1-indexed)")
        if self.action is not None:
            return self.action
        assert self.actions is not None
        if t > len(self.actions):
            raise IndexError(f"period {t} beyond schedule length {len(self.actions)}")
        return self.actions[t - 1]

    def prefix(self, t: int) -> ActionSequence:
        """Control actions for periods ``1 .. t``."""
        return tuple(self.at(k) for k in range(1, t + 1))


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Panel:
    """Observed outcomes and actions for ``n_units`` over ``n_periods`` periods.

    ``horizon`` is the target period T at which counterfactuals are
    evaluated; ``n_periods`` may extend past it (up to ``2 * horizon - 1``)
    so that lag-based estimators can see post-deviation outcomes.

    ``exogenous_until[n]`` is declared metadata: the last period through
    which unit ``n``'s actions are guaranteed non-adaptive (conditionally
    mean-independent of its potential outcomes).  It cannot be inferred
    from ``outcomes``/``actions`` and must come from the data source.
    """

    outcomes: np.ndarray
    actions: np.ndarray
    n_actions: int
    horizon: int
    control: ControlSchedule
    exogenous_until: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "outcomes", _readonly(np.asarray(self.outcomes, dtype=float)))
        object.__setattr__(self, "actions", _readonly(np.asarray(self.actions, dtype=np.int64)))
        object.__setattr__(
            self, "exogenous_until", _readonly(np.asarray(self.exogenous_until, dtype=np.int64))
        )

    @property
    def n_units(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_periods(self) -> int:
        return self.outcomes.shape[1]


def first_deviation_time(panel: Panel, n: int) -> int | None:
    """First period at which unit ``n`` departs from the control schedule.

    Returns ``None`` for units that follow the control schedule over the
    full observation window ("never treated").
    """
    if not 0 <= n < panel.n_units:
        raise IndexError(f"unit {n} out of range [0, {panel.n_units})")
    row = panel.actions[n]
    for t in range(1, panel.n_periods + 1):
        if row[t - 1] != panel.control.at(t):
            return t
    return None


def observed_sequence(panel: Panel, n: int, t: int) -> ActionSequence:
    """Actions received by unit ``n`` over periods ``1 .. t``."""
    if not 1 <= t <= panel.n_periods:
        raise IndexError(f"period {t} out of range [1, {panel.n_periods}]")
    if not 0 <= n < panel.n_units:
        raise IndexError(f"unit {n} out of range [0, {panel.n_units})")
    return tuple(int(a) for a in panel.actions[n, :t])


def panel_violations(
    panel: Panel, claimed_first_deviation: Sequence[int | None] | None = None
) -> list[Violation]:
    """Collect every invariant violation; an empty list means the panel is valid.

    ``claimed_first_deviation`` optionally carries externally declared
    first-deviation periods (e.g. from file metadata); the control-period
    invariant (actions equal the control schedule before that period) is
    checked against the claim.
    """
    out: list[Violation] = []
    n_units, n_periods = panel.outcomes.shape

    if panel.actions.shape != panel.outcomes.shape:
        out.append(
            Violation(
                "shape-mismatch",
                f"outcomes {panel.outcomes.shape} vs actions {panel.actions.shape}",
            )
        )
        return out

    if panel.n_actions < 1:
        out.append(Violation("bad-action-count", f"n_actions={panel.n_actions}"))
    if not 1 <= panel.horizon <= n_periods:
        out.append(Violation("bad-horizon", f"horizon={panel.horizon} not in [1, {n_periods}]"))
    elif n_periods > 2 * panel.horizon - 1:
        out.append(
            Violation(
                "bad-horizon",
                f"n_periods={n_periods} exceeds 2*horizon-1={2 * panel.horizon - 1}",
            )
        )

    if panel.control.actions is not None and len(panel.control.actions) != n_periods:
        out.append(
            Violation(
                "bad-control-schedule",
                f"time-varying schedule has length {len(panel.control.actions)}, expected {n_periods}",
            )
        )
    try:
        control_ok = all(0 <= panel.control.at(t) < panel.n_actions for t in range(1, n_periods + 1))
    except IndexError:
        control_ok = False
    if not control_ok:
        out.append(Violation("bad-control-schedule", "control action outside [0, n_actions)"))

    bad = np.argwhere((panel.actions < 0) | (panel.actions >= panel.n_actions))
    for n, col in bad:
        out.append(
            Violation(
                "action-out-of-range",
                f"action {panel.actions[n, col]} not in [0, {panel.n_actions})",
                unit=int(n),
                time=int(col) + 1,
            )
        )

    if panel.exogenous_until.shape != (n_units,):
        out.append(
            Violation(
                "bad-exogeneity-metadata",
                f"exogenous_until has shape {panel.exogenous_until.shape}, expected ({n_units},)",
            )
        )
    else:
        for n in np.nonzero((panel.exogenous_until < 0) | (panel.exogenous_until > n_periods))[0]:
            out.append(
                Violation(
                    "bad-exogeneity-metadata",
                    f"exogenous_until={panel.exogenous_until[n]} not in [0, {n_periods}]",
                    unit=int(n),
                )
            )

    if claimed_first_deviation is not None and control_ok and not bad.size:
        for n, claimed in enumerate(claimed_first_deviation):
            if claimed is None:
                claimed = n_periods + 1
            for t in range(1, min(int(claimed), n_periods + 1)):
                if panel.actions[n, t - 1] != panel.control.at(t):
                    out.append(
                        Violation(
                            "control-period-violation",
                            f"action {panel.actions[n, t - 1]} != control {panel.control.at(t)} "
                            f"before claimed first deviation {claimed}",
                            unit=int(n),
                            time=t,
                        )
                    )
    return out


def validate_panel(
    panel: Panel, claimed_first_deviation: Sequence[int | None] | None = None
) -> None:
    """Raise :class:`PanelValidationError` listing every violation, if any."""
    violations = panel_violations(panel, claimed_first_deviation)
    if violations:
        raise PanelValidationError(violations)


# ---------------------------------------------------------------------------
# File format: one CSV row per (unit, period) plus a JSON metadata companion.
# Outcome values are written with shortest round-trip precision, so reading
# them back reproduces the floats exactly.
# ---------------------------------------------------------------------------

def write_panel_csv(panel: Panel, csv_path: str | Path, meta_path: str | Path) -> None:
    csv_path, meta_path = Path(csv_path), Path(meta_path)
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit", "time", "action", "outcome"])
        for n in range(panel.n_units):
            for t in range(1, panel.n_periods + 1):
                writer.writerow([n, t, int(panel.actions[n, t - 1]), repr(float(panel.outcomes[n, t - 1]))])

    if panel.control.is_time_invariant:
        control = {"kind": "time_invariant", "action": panel.control.action}
    else:
        control = {"kind": "time_varying", "actions": list(panel.control.actions or ())}
    meta = {
        "n_units": panel.n_units,
        "n_periods": panel.n_periods,
        "horizon": panel.horizon,
        "n_actions": panel.n_actions,
        "control": control,
        "exogenous_until": [int(v) for v in panel.exogenous_until],
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_panel_csv(csv_path: str | Path, meta_path: str | Path) -> Panel:
    """Load a panel written by :func:`write_panel_csv`.

    A metadata file without ``exogenous_until`` is accepted (each unit
    defaults to ``n_periods``, i.e. fully pre-committed) but a warning is
    emitted, since that assumption cannot be checked from the data.
    """
    meta = json.loads(Path(meta_path).read_text())
    n_units, n_periods = int(meta["n_units"]), int(meta["n_periods"])
    outcomes = np.zeros((n_units, n_periods))
    actions = np.zeros((n_units, n_periods), dtype=np.int64)
    seen = np.zeros((n_units, n_periods), dtype=bool)
    with Path(csv_path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            n, t = int(row["unit"]), int(row["time"])
            outcomes[n, t - 1] = float(row["outcome"])
            actions[n, t - 1] = int(row["action"])
            seen[n, t - 1] = True
    if not seen.all():
        missing = np.argwhere(~seen)[0]
        raise PanelValidationError(
            [Violation("missing-cell", "no CSV row", unit=int(missing[0]), time=int(missing[1]) + 1)]
        )

    control_meta = meta["control"]
    if control_meta["kind"] == "time_invariant":
        control = ControlSchedule.time_invariant(control_meta["action"])
    else:
        control = ControlSchedule.time_varying(control_meta["actions"])

    if "exogenous_until" in meta:
        exogenous = np.asarray(meta["exogenous_until"], dtype=np.int64)
    else:
        import warnings

        warnings.warn(
            "panel metadata lacks 'exogenous_until'; defaulting every unit to the "
            "full observation window, which asserts fully pre-committed actions",
            stacklevel=2,
        )
        exogenous = np.full(n_units, n_periods, dtype=np.int64)

    panel = Panel(
        outcomes=outcomes,
        actions=actions,
        n_actions=int(meta["n_actions"]),
        horizon=int(meta["horizon"]),
        control=control,
        exogenous_until=exogenous,
    )
    claimed = meta.get("first_deviation")
    validate_panel(panel, claimed_first_deviation=claimed)
    return panel

"""Synthetic experiment designs with known donor structure.

Builders here produce fully materialized instances (system, policies,
panel, factors) whose donor sets are populated by construction:

* per-period designs place ``donors_per_set`` units on each
  (action, period) deviation pattern plus a never-treated block,
* per-lag designs spread first deviations of each action over the horizon,
* the exact-sequence design gives every queried sequence its own donor
  block.

When ``shared_dynamics`` is on, all units share the transition and input
matrices and differ only in their readout vectors.  Unit factors are then
linear in the readouts, so any unit's stacked factor lies in the span of a
handful of generic donors -- the span condition behind synthetic weights
holds exactly, which is what the exact-identification checks need.
Archetype cloning (``archetypes`` < donors per set) repeats readouts across
donors so that growing a donor set adds fresh noise but no new factors.

Estimation targets are built maximally adaptive (empty committed prefix),
which keeps them out of every donor set.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .panel import ControlSchedule, Panel
from .simulate import (
    GeneralFactors,
    LatentFactors,
    LtiSystem,
    LtvSystem,
    NoiseLog,
    RandomRule,
    System,
    UnitPolicy,
    simulate,
    simulate_general,
)


@dataclass(frozen=True, eq=False)
class Instance:
    panel: Panel
    factors: LatentFactors
    targets: tuple[int, ...]
    system: System | None = None
    noise: NoiseLog | None = None
    policies: tuple[UnitPolicy, ...] | None = None


def _stable_matrix(rng: np.random.Generator, dim: int, radius: float = 0.6) -> np.ndarray:
    m = rng.standard_normal((dim, dim))
    eig = np.max(np.abs(np.linalg.eigvals(m)))
    return m * (radius / max(eig, 1e-12))


def _input_matrix(rng: np.random.Generator, dim: int) -> np.ndarray:
    # QR keeps the matrix well conditioned (and thus invertible).
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * (0.5 + rng.random(dim))


def _readouts(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return rng.standard_normal(shape)


def build_ltv_system(
    n_units: int,
    n_actions: int,
    dim: int,
    n_periods: int,
    rng: np.random.Generator,
    *,
    shared_dynamics: bool = True,
    sigma_state: float = 0.0,
    sigma_outcome: float = 0.0,
    readouts: np.ndarray | None = None,
    feedthroughs: np.ndarray | None = None,
) -> LtvSystem:
    if shared_dynamics:
        B = np.stack([_stable_matrix(rng, dim) for _ in range(n_periods)])
        C = np.stack([_input_matrix(rng, dim) for _ in range(n_periods)])
        B = np.broadcast_to(B, (n_units, n_periods, dim, dim)).copy()
        C = np.broadcast_to(C, (n_units, n_periods, dim, dim)).copy()
    else:
        B = np.stack([[_stable_matrix(rng, dim) for _ in range(n_periods)] for _ in range(n_units)])
        C = np.stack([[_input_matrix(rng, dim) for _ in range(n_periods)] for _ in range(n_units)])
    theta = _readouts(rng, (n_units, n_periods, dim)) if readouts is None else readouts
    theta_t = _readouts(rng, (n_units, n_periods, dim)) if feedthroughs is None else feedthroughs
    w = rng.standard_normal((n_actions, dim))
    return LtvSystem(
        state_transition=B,
        input_map=C,
        readout=theta,
        feedthrough=theta_t,
        action_vectors=w,
        state_noise=sigma_state,
        outcome_noise=sigma_outcome,
    )


def build_lti_system(
    n_units: int,
    n_actions: int,
    dim: int,
    rng: np.random.Generator,
    *,
    shared_dynamics: bool = True,
    sigma_state: float = 0.0,
    sigma_outcome: float = 0.0,
    readouts: np.ndarray | None = None,
    feedthroughs: np.ndarray | None = None,
) -> LtiSystem:
    if shared_dynamics:
        B = np.broadcast_to(_stable_matrix(rng, dim), (n_units, dim, dim)).copy()
        C = np.broadcast_to(_input_matrix(rng, dim), (n_units, dim, dim)).copy()
    else:
        B = np.stack([_stable_matrix(rng, dim) for _ in range(n_units)])
        C = np.stack([_input_matrix(rng, dim) for _ in range(n_units)])
    theta = _readouts(rng, (n_units, dim)) if readouts is None else readouts
    theta_t = _readouts(rng, (n_units, dim)) if feedthroughs is None else feedthroughs
    w = rng.standard_normal((n_actions, dim))
    return LtiSystem(
        state_transition=B,
        input_map=C,
        readout=theta,
        feedthrough=theta_t,
        action_vectors=w,
        state_noise=sigma_state,
        outcome_noise=sigma_outcome,
    )


def _clone_rows(rng: np.random.Generator, n_rows: int, archetypes: int | None, tail: tuple[int, ...]):
    """Draw ``archetypes`` distinct rows and cycle them over ``n_rows``."""
    if archetypes is None or archetypes >= n_rows:
        return rng.standard_normal((n_rows,) + tail)
    pool = rng.standard_normal((archetypes,) + tail)
    return pool[np.arange(n_rows) % archetypes]


def build_ltv_instance(
    n_actions: int,
    horizon: int,
    dim: int,
    donors_per_set: int,
    n_targets: int,
    *,
    sigma_state: float = 0.0,
    sigma_outcome: float = 0.0,
    seed: int = 0,
    noise_seed: int | None = None,
    n_periods: int | None = None,
    shared_dynamics: bool = True,
    archetypes: int | None = None,
    n_control_donors: int | None = None,
    control: ControlSchedule | None = None,
) -> Instance:
    """Per-period donor blocks: for every non-control action and every period,
    ``donors_per_set`` units deviate exactly there (random actions after),
    plus a never-treated block of the same size, plus adaptive targets.

    ``seed`` fixes the system and factors; ``noise_seed`` (defaulting to it)
    drives the innovations and any adaptive actions.  With ``archetypes``
    set, system parameters do not depend on ``donors_per_set``, so growing a
    donor set only adds clones.
    """
    P = horizon if n_periods is None else n_periods
    control = control or ControlSchedule.time_varying([0] * P)
    rng = np.random.default_rng([seed, 91])

    policies: list[UnitPolicy] = []
    for t in range(1, horizon + 1):
        for a in range(n_actions):
            if a == control.at(t):
                continue
            prefix = control.prefix(t - 1) + (a,)
            policies.extend(UnitPolicy(committed=prefix, rule=RandomRule()) for _ in range(donors_per_set))
    n_control = donors_per_set if n_control_donors is None else n_control_donors
    n_action_blocks = (len(policies)) // donors_per_set
    policies.extend(UnitPolicy(committed=control.prefix(P)) for _ in range(n_control))
    first_target = len(policies)
    policies.extend(UnitPolicy(committed=(), rule=RandomRule()) for _ in range(n_targets))
    n_units = len(policies)

    block_sizes = [donors_per_set] * n_action_blocks + [n_control]
    theta = _clone_block_structure(rng, n_units, block_sizes, archetypes, (P, dim))
    theta_t = _clone_block_structure(rng, n_units, block_sizes, archetypes, (P, dim))
    system = build_ltv_system(
        n_units,
        n_actions,
        dim,
        P,
        rng,
        shared_dynamics=shared_dynamics,
        sigma_state=sigma_state,
        sigma_outcome=sigma_outcome,
        readouts=theta,
        feedthroughs=theta_t,
    )
    sim = simulate(
        system, policies, control, horizon=horizon, n_periods=P,
        seed=seed if noise_seed is None else noise_seed,
    )
    return Instance(
        panel=sim.panel,
        factors=sim.factors,
        targets=tuple(range(first_target, n_units)),
        system=system,
        noise=sim.noise,
        policies=tuple(policies),
    )


def _clone_block_structure(
    rng: np.random.Generator,
    n_units: int,
    block_sizes: list[int],
    archetypes: int | None,
    tail: tuple[int, ...],
) -> np.ndarray:
    """Readouts for [donor blocks..., extras]: each block cycles its own
    archetype pool; units past the blocks draw fresh.  With ``archetypes``
    set, consumption of ``rng`` does not depend on the block sizes, so
    growing a block leaves every other draw unchanged."""
    rows = np.empty((n_units,) + tail)
    pos = 0
    for size in block_sizes:
        rows[pos : pos + size] = _clone_rows(rng, size, archetypes, tail)
        pos += size
    if pos < n_units:
        rows[pos:] = rng.standard_normal((n_units - pos,) + tail)
    return rows


def build_lti_instance(
    n_actions: int,
    horizon: int,
    dim: int,
    donors_per_set: int,
    n_targets: int,
    *,
    sigma_state: float = 0.0,
    sigma_outcome: float = 0.0,
    seed: int = 0,
    noise_seed: int | None = None,
    n_periods: int | None = None,
    shared_dynamics: bool = True,
    archetypes: int | None = None,
    n_control_donors: int | None = None,
    control_action: int = 0,
) -> Instance:
    """Per-action donor blocks with first deviations spread over the horizon,
    plus a never-treated block, plus adaptive targets.  Seeding follows
    :func:`build_ltv_instance`."""
    P = 2 * horizon - 1 if n_periods is None else n_periods
    control = ControlSchedule.time_invariant(control_action)
    rng = np.random.default_rng([seed, 92])

    policies: list[UnitPolicy] = []
    for a in range(n_actions):
        if a == control_action:
            continue
        for i in range(donors_per_set):
            tstar = 1 + (i % horizon)
            prefix = (control_action,) * (tstar - 1) + (a,)
            policies.append(UnitPolicy(committed=prefix, rule=RandomRule()))
    n_control = donors_per_set if n_control_donors is None else n_control_donors
    n_action_blocks = (len(policies)) // donors_per_set
    policies.extend(UnitPolicy(committed=(control_action,) * P) for _ in range(n_control))
    first_target = len(policies)
    policies.extend(UnitPolicy(committed=(), rule=RandomRule()) for _ in range(n_targets))
    n_units = len(policies)

    block_sizes = [donors_per_set] * n_action_blocks + [n_control]
    theta = _clone_block_structure(rng, n_units, block_sizes, archetypes, (dim,))
    theta_t = _clone_block_structure(rng, n_units, block_sizes, archetypes, (dim,))
    system = build_lti_system(
        n_units,
        n_actions,
        dim,
        rng,
        shared_dynamics=shared_dynamics,
        sigma_state=sigma_state,
        sigma_outcome=sigma_outcome,
        readouts=theta,
        feedthroughs=theta_t,
    )
    sim = simulate(
        system, policies, control, horizon=horizon, n_periods=P,
        seed=seed if noise_seed is None else noise_seed,
    )
    return Instance(
        panel=sim.panel,
        factors=sim.factors,
        targets=tuple(range(first_target, n_units)),
        system=system,
        noise=sim.noise,
        policies=tuple(policies),
    )


def build_general_instance(
    n_actions: int,
    horizon: int,
    dim: int,
    donors_per_sequence: int,
    query_sequences: list[tuple[int, ...]],
    n_targets: int,
    *,
    noise_scale: float = 0.0,
    seed: int = 0,
) -> Instance:
    """Exact-sequence donor blocks: every queried sequence gets its own block
    of units receiving it verbatim; targets receive random sequences.

    All assignment is fixed up front (fully exogenous), as the
    exact-sequence strategy requires of its donors.
    """
    rng = np.random.default_rng([seed, 93])
    rows: list[tuple[int, ...]] = []
    for seq in query_sequences:
        if len(seq) != horizon:
            raise ValueError(f"queried sequence {seq} does not have length {horizon}")
        rows.extend([tuple(seq)] * donors_per_sequence)
    first_target = len(rows)
    for _ in range(n_targets):
        rows.append(tuple(int(a) for a in rng.integers(0, n_actions, size=horizon)))
    actions = np.asarray(rows, dtype=np.int64)

    n_units = len(rows)
    unit_factors = tuple(rng.standard_normal((n_units, dim)) for _ in range(horizon))
    needed = {tuple(seq[:t]) for seq in rows for t in range(1, horizon + 1)}
    needed.update(tuple(q) for q in query_sequences)
    sequence_vectors = {key: rng.standard_normal(dim) for key in sorted(needed)}
    factors = GeneralFactors(unit_factors=unit_factors, sequence_vectors=sequence_vectors)

    control = ControlSchedule.time_invariant(0)
    panel = simulate_general(
        factors, actions, control, horizon=horizon, noise_scale=noise_scale, seed=seed
    )
    return Instance(panel=panel, factors=factors, targets=tuple(range(first_target, n_units)))


def random_sequences(
    n_actions: int, horizon: int, count: int, rng: np.random.Generator, *, distinct: bool = False
) -> list[tuple[int, ...]]:
    """Random action sequences; with ``distinct`` they are sampled without
    replacement from the full cartesian space (which must be large enough)."""
    if distinct:
        total = n_actions**horizon
        if count > total:
            raise ValueError(f"cannot draw {count} distinct sequences from {total}")
        space = list(itertools.product(range(n_actions), repeat=horizon))
        picks = rng.choice(total, size=count, replace=False)
        return [space[i] for i in picks]
    return [tuple(int(a) for a in rng.integers(0, n_actions, size=horizon)) for _ in range(count)]


def build_random_assignment_instance(
    n_actions: int,
    horizon: int,
    dim: int,
    n_units: int,
    *,
    sigma_state: float = 0.0,
    sigma_outcome: float = 0.0,
    seed: int = 0,
    n_periods: int | None = None,
    control_action: int = 0,
) -> Instance:
    """Units deviate at a uniformly random period (or never) into uniformly
    random pre-committed continuations.

    Assignment is fixed up front, so every unit is fully exogenous; what this
    design stresses is coverage of the sequence space, which the
    exact-sequence strategy needs and the blip strategies do not.
    """
    P = 2 * horizon - 1 if n_periods is None else n_periods
    control = ControlSchedule.time_invariant(control_action)
    rng = np.random.default_rng([seed, 94])

    other = [a for a in range(n_actions) if a != control_action]
    policies = []
    for _ in range(n_units):
        tstar = int(rng.integers(1, horizon + 2))  # horizon + 1 means never treated
        if tstar > horizon:
            committed = (control_action,) * P
        else:
            first = other[rng.integers(0, len(other))]
            suffix = rng.integers(0, n_actions, size=P - tstar)
            committed = (control_action,) * (tstar - 1) + (first,) + tuple(int(a) for a in suffix)
        policies.append(UnitPolicy(committed=committed))

    system = build_lti_system(
        n_units,
        n_actions,
        dim,
        rng,
        shared_dynamics=True,
        sigma_state=sigma_state,
        sigma_outcome=sigma_outcome,
    )
    sim = simulate(system, policies, control, horizon=horizon, n_periods=P, seed=seed)
    return Instance(
        panel=sim.panel,
        factors=sim.factors,
        targets=(),
        system=system,
        noise=sim.noise,
        policies=tuple(policies),
    )

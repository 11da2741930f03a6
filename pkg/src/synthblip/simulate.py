"""Synthetic data generators for the three outcome models.

Two linear state-space generators drive most experiments.  Each unit ``n``
carries a latent state ``z`` that evolves with the chosen actions:

    z[t] = B[n,t] z[t-1] + C[n,t] w[A[n,t]] + eta[n,t]          (state)
    Y[t] = <theta[n,t], z[t]> + <theta_tilde[n,t], w[A[n,t]]> + eta_out[n,t]

with ``z[0] = 0`` and ``w[.]`` a per-action embedding.  In the
time-invariant variant the matrices ``B, C, theta, theta_tilde`` do not
depend on ``t``.  Unrolling the recursion gives a closed-form additive
factor representation of the outcome,

    Y[t] = sum_{l=1..t} ( <psi[t,l], w[A[l]]> + eps[t,l] ),

where the response loadings ``psi`` depend only on the system matrices:

    time-varying:    psi[t,l] = (B[t] ... B[l+1] C[l])' theta[t]   (l < t)
                     psi[t,t] = C[t]' theta[t] + theta_tilde[t]
    time-invariant:  psi[k]   = (B^k C)' theta                     (k >= 1)
                     psi[0]   = C' theta + theta_tilde

``ltv_factors`` / ``lti_factors`` compute those loadings, and
``innovation_contributions`` reconstructs the matching ``eps`` terms from a
logged noise draw, so the representation can be verified pointwise.

A third generator, :func:`simulate_general`, draws panels straight from an
unstructured factor model ``Y[n,t] = <v[n,t], w_seq> + noise`` with one
latent vector per realized action sequence.

Determinism contract: every unit consumes RNG streams derived from
``(seed, unit)``, so simulating units in any order (or in parallel)
reproduces the serial output bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .panel import ActionSequence, ControlSchedule, Panel


# ---------------------------------------------------------------------------
# System parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LtvSystem:
    """Per-unit, per-period linear dynamics. Shapes: (N, P, d, d) matrices,
    (N, P, d) readouts, (A, d) action vectors."""

    state_transition: np.ndarray
    input_map: np.ndarray
    readout: np.ndarray
    feedthrough: np.ndarray
    action_vectors: np.ndarray
    state_noise: float = 0.0
    outcome_noise: float = 0.0

    def __post_init__(self) -> None:
        _check_system_shapes(self, time_varying=True)

    @property
    def n_units(self) -> int:
        return self.state_transition.shape[0]

    @property
    def n_periods(self) -> int:
        return self.state_transition.shape[1]

    @property
    def dim(self) -> int:
        return self.action_vectors.shape[1]

    @property
    def n_actions(self) -> int:
        return self.action_vectors.shape[0]


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """Time-invariant dynamics. Shapes: (N, d, d) matrices, (N, d) readouts,
    (A, d) action vectors."""

    state_transition: np.ndarray
    input_map: np.ndarray
    readout: np.ndarray
    feedthrough: np.ndarray
    action_vectors: np.ndarray
    state_noise: float = 0.0
    outcome_noise: float = 0.0

    def __post_init__(self) -> None:
        _check_system_shapes(self, time_varying=False)

    @property
    def n_units(self) -> int:
        return self.state_transition.shape[0]

    @property
    def dim(self) -> int:
        return self.action_vectors.shape[1]

    @property
    def n_actions(self) -> int:
        return self.action_vectors.shape[0]


System = Union[LtvSystem, LtiSystem]


def _check_system_shapes(system, time_varying: bool) -> None:
    w = np.asarray(system.action_vectors, dtype=float)
    if w.ndim != 2:
        raise ValueError("action_vectors must have shape (n_actions, dim)")
    d = w.shape[1]
    mat = (d, d)
    expect = {
        "state_transition": mat,
        "input_map": mat,
        "readout": (d,),
        "feedthrough": (d,),
    }
    for name, tail in expect.items():
        arr = np.asarray(getattr(system, name), dtype=float)
        lead = 2 if time_varying else 1
        if arr.ndim != lead + len(tail) or arr.shape[lead:] != tail:
            raise ValueError(f"{name} has shape {arr.shape}, expected (N,{' P,' if time_varying else ''}) + {tail}")
        object.__setattr__(system, name, arr)
    object.__setattr__(system, "action_vectors", w)
    if system.state_noise < 0 or system.outcome_noise < 0:
        raise ValueError("noise scales must be non-negative")


def _dynamics(system: System, n: int, t: int):
    """(B, C, theta, theta_tilde) for unit ``n`` at period ``t`` (1-indexed)."""
    if isinstance(system, LtvSystem):
        k = t - 1
        return (
            system.state_transition[n, k],
            system.input_map[n, k],
            system.readout[n, k],
            system.feedthrough[n, k],
        )
    return (
        system.state_transition[n],
        system.input_map[n],
        system.readout[n],
        system.feedthrough[n],
    )


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantRule:
    action: int


@dataclass(frozen=True)
class ThresholdRule:
    """Pick ``above`` when <readout_t, state_{t-1}> >= cutoff, else ``below``."""

    cutoff: float
    below: int
    above: int


@dataclass(frozen=True)
class RandomRule:
    """Uniform draw over ``actions`` (all actions when None) from the unit's
    policy RNG stream."""

    actions: tuple[int, ...] | None = None


PolicyRule = Union[ConstantRule, ThresholdRule, RandomRule]


@dataclass(frozen=True)
class UnitPolicy:
    """A fixed pre-committed action prefix, then a rule.

    The committed prefix is chosen before any outcome is realized, so the
    unit's actions are exogenous through period ``len(committed)``; from
    ``adaptive_from`` onward the rule may react to the latent state.
    """

    committed: tuple[int, ...]
    rule: PolicyRule | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "committed", tuple(int(a) for a in self.committed))

    @property
    def adaptive_from(self) -> int:
        return len(self.committed) + 1


class PolicyError(ValueError):
    """A policy produced (or would require) an invalid action."""


def _rule_action(
    rule: PolicyRule,
    rng: np.random.Generator,
    state: np.ndarray,
    readout: np.ndarray,
    n_actions: int,
) -> int:
    if isinstance(rule, ConstantRule):
        return rule.action
    if isinstance(rule, ThresholdRule):
        return rule.above if float(readout @ state) >= rule.cutoff else rule.below
    if isinstance(rule, RandomRule):
        if rule.actions is None:
            return int(rng.integers(0, n_actions))
        return int(rule.actions[rng.integers(0, len(rule.actions))])
    raise PolicyError(f"unknown rule type {type(rule).__name__}")


def _action_for(
    policy: UnitPolicy,
    t: int,
    rng: np.random.Generator | None,
    state: np.ndarray,
    prev_action_vector: np.ndarray,
    readout: np.ndarray,
    n_actions: int,
) -> int:
    del prev_action_vector  # all built-in rules condition on state/readout only
    if t <= len(policy.committed):
        a = policy.committed[t - 1]
    elif policy.rule is None:
        raise PolicyError(f"no rule configured but period {t} exceeds committed prefix")
    else:
        assert rng is not None
        a = _rule_action(policy.rule, rng, state, readout, n_actions)
    if not 0 <= a < n_actions:
        raise PolicyError(f"policy emitted action {a} outside [0, {n_actions})")
    return int(a)


# ---------------------------------------------------------------------------
# Latent factors
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LtvFactors:
    """``response[n, t-1, l-1]`` is the loading of Y[n,t] on the action taken
    at period ``l`` (zero-filled for l > t)."""

    response: np.ndarray      # (N, P, P, d)
    action_vectors: np.ndarray  # (A, d)

    @property
    def n_units(self) -> int:
        return self.response.shape[0]

    @property
    def n_periods(self) -> int:
        return self.response.shape[1]

    @property
    def dim(self) -> int:
        return self.response.shape[3]


@dataclass(frozen=True, eq=False)
class LtiFactors:
    """``response[n, k]`` is the loading of an outcome on the action taken
    ``k`` periods earlier."""

    response: np.ndarray      # (N, L, d), lags 0 .. L-1
    action_vectors: np.ndarray  # (A, d)

    @property
    def n_units(self) -> int:
        return self.response.shape[0]

    @property
    def n_lags(self) -> int:
        return self.response.shape[1]

    @property
    def dim(self) -> int:
        return self.response.shape[2]


@dataclass(frozen=True, eq=False)
class GeneralFactors:
    """Unstructured factor model: one unit vector per (unit, period) and one
    latent vector per action sequence.

    ``sequence_vectors`` is sparse; only realized or queried sequences need
    an entry.  Dimensions may vary with the period:
    ``unit_factors[t-1]`` has shape (N, d_t) and must match the vectors of
    length-``t`` sequences.
    """

    unit_factors: tuple[np.ndarray, ...]
    sequence_vectors: dict[ActionSequence, np.ndarray]

    @property
    def n_units(self) -> int:
        return self.unit_factors[0].shape[0]

    @property
    def n_periods(self) -> int:
        return len(self.unit_factors)

    def sequence_vector(self, sequence: Sequence[int]) -> np.ndarray:
        key = tuple(int(a) for a in sequence)
        try:
            return self.sequence_vectors[key]
        except KeyError:
            raise KeyError(
                f"no latent vector stored for sequence {key}; general-model factors are sparse"
            ) from None


LatentFactors = Union[GeneralFactors, LtvFactors, LtiFactors]


def ltv_factors(system: LtvSystem, n_periods: int | None = None) -> LtvFactors:
    """Closed-form response loadings implied by a time-varying system."""
    P = system.n_periods if n_periods is None else int(n_periods)
    if P > system.n_periods:
        raise ValueError(f"system defines {system.n_periods} periods, requested {P}")
    N, d = system.n_units, system.dim
    B, C = system.state_transition, system.input_map
    th, tt = system.readout, system.feedthrough
    psi = np.zeros((N, P, P, d))
    for t in range(1, P + 1):
        psi[:, t - 1, t - 1] = np.einsum("nji,nj->ni", C[:, t - 1], th[:, t - 1]) + tt[:, t - 1]
        u = th[:, t - 1]
        for ell in range(t - 1, 0, -1):
            # u accumulates B[ell+1]' ... B[t]' theta[t], per unit
            u = np.einsum("nji,nj->ni", B[:, ell], u)
            psi[:, t - 1, ell - 1] = np.einsum("nji,nj->ni", C[:, ell - 1], u)
    return LtvFactors(response=psi, action_vectors=np.array(system.action_vectors))


def lti_factors(system: LtiSystem, n_lags: int) -> LtiFactors:
    """Closed-form response loadings by lag for a time-invariant system."""
    N, d = system.n_units, system.dim
    B, C = system.state_transition, system.input_map
    psi = np.zeros((N, n_lags, d))
    psi[:, 0] = np.einsum("nji,nj->ni", C, system.readout) + system.feedthrough
    u = system.readout
    for k in range(1, n_lags):
        u = np.einsum("nji,nj->ni", B, u)
        psi[:, k] = np.einsum("nji,nj->ni", C, u)
    return LtiFactors(response=psi, action_vectors=np.array(system.action_vectors))


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NoiseLog:
    """Every innovation drawn during a simulation, for counterfactual replay."""

    state: np.ndarray    # (N, P, d)
    outcome: np.ndarray  # (N, P)

    @classmethod
    def zeros(cls, n_units: int, n_periods: int, dim: int) -> "NoiseLog":
        return cls(state=np.zeros((n_units, n_periods, dim)), outcome=np.zeros((n_units, n_periods)))


@dataclass(frozen=True, eq=False)
class SimulationOutput:
    panel: Panel
    factors: LatentFactors
    noise: NoiseLog


def _unit_noise_rng(seed: int, n: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), n, 0])


def _unit_policy_rng(seed: int, n: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), n, 1])


def simulate(
    system: System,
    policies: Sequence[UnitPolicy],
    control: ControlSchedule,
    *,
    horizon: int,
    n_periods: int | None = None,
    seed: int = 0,
) -> SimulationOutput:
    """Roll the state recursion forward under (possibly adaptive) policies.

    ``n_periods`` defaults to the system's period count for time-varying
    systems and to ``2 * horizon - 1`` for time-invariant ones, which is the
    observation window the lag-based estimator needs.
    """
    if n_periods is None:
        n_periods = system.n_periods if isinstance(system, LtvSystem) else 2 * horizon - 1
    if isinstance(system, LtvSystem) and n_periods > system.n_periods:
        raise ValueError(f"system defines {system.n_periods} periods, requested {n_periods}")
    N, d, A = system.n_units, system.dim, system.n_actions
    if len(policies) != N:
        raise ValueError(f"got {len(policies)} policies for {N} units")

    outcomes = np.zeros((N, n_periods))
    actions = np.zeros((N, n_periods), dtype=np.int64)
    eta = np.zeros((N, n_periods, d))
    eta_out = np.zeros((N, n_periods))
    w = system.action_vectors

    for n in range(N):
        noise_rng = _unit_noise_rng(seed, n)
        eta[n] = system.state_noise * noise_rng.standard_normal((n_periods, d))
        eta_out[n] = system.outcome_noise * noise_rng.standard_normal(n_periods)
        # fully committed units never consult their policy stream
        policy_rng = _unit_policy_rng(seed, n) if len(policies[n].committed) < n_periods else None
        z = np.zeros(d)
        prev_vec = np.zeros(d)  # w at the (absent) period-0 action
        for t in range(1, n_periods + 1):
            B_, C_, th, tt = _dynamics(system, n, t)
            a = _action_for(policies[n], t, policy_rng, z, prev_vec, th, A)
            actions[n, t - 1] = a
            z = B_ @ z + C_ @ w[a] + eta[n, t - 1]
            outcomes[n, t - 1] = th @ z + tt @ w[a] + eta_out[n, t - 1]
            prev_vec = w[a]

    exogenous = np.array([min(len(p.committed), n_periods) for p in policies], dtype=np.int64)
    panel = Panel(
        outcomes=outcomes,
        actions=actions,
        n_actions=A,
        horizon=horizon,
        control=control,
        exogenous_until=exogenous,
    )
    if isinstance(system, LtvSystem):
        factors: LatentFactors = ltv_factors(system, n_periods)
    else:
        factors = lti_factors(system, n_periods)
    return SimulationOutput(panel=panel, factors=factors, noise=NoiseLog(state=eta, outcome=eta_out))


def counterfactual_replay(
    system: System, noise: NoiseLog, n: int, actions: Sequence[int]
) -> float:
    """Outcome unit ``n`` would have produced under ``actions``, holding the
    logged innovations fixed.  Returns Y at period ``len(actions)``."""
    t_end = len(actions)
    if noise is None:
        raise ValueError("counterfactual replay requires the simulation's noise log")
    if t_end < 1 or t_end > noise.state.shape[1]:
        raise ValueError(f"sequence length {t_end} outside [1, {noise.state.shape[1]}]")
    w = system.action_vectors
    z = np.zeros(system.dim)
    y = 0.0
    for t in range(1, t_end + 1):
        B_, C_, th, tt = _dynamics(system, n, t)
        a = int(actions[t - 1])
        if not 0 <= a < system.n_actions:
            raise ValueError(f"action {a} outside [0, {system.n_actions})")
        z = B_ @ z + C_ @ w[a] + noise.state[n, t - 1]
        y = th @ z + tt @ w[a] + noise.outcome[n, t - 1]
    return float(y)


def innovation_contributions(system: System, noise: NoiseLog, n: int, t: int) -> np.ndarray:
    """Additive noise terms eps[t, l] for l = 1..t implied by the logged draws.

    By the unrolled recursion these do not depend on the action sequence; the
    simulated outcome equals ``sum_l (<psi[t,l], w[a_l]> + eps[t,l])``.
    """
    eps = np.zeros(t)
    _, _, th, _ = _dynamics(system, n, t)
    eps[t - 1] = th @ noise.state[n, t - 1] + noise.outcome[n, t - 1]
    u = th
    for ell in range(t - 1, 0, -1):
        u = _dynamics(system, n, ell + 1)[0].T @ u
        eps[ell - 1] = u @ noise.state[n, ell - 1]
    return eps


def simulate_general(
    factors: GeneralFactors,
    actions: np.ndarray,
    control: ControlSchedule,
    *,
    horizon: int,
    noise_scale: float = 0.0,
    seed: int = 0,
) -> Panel:
    """Panel drawn from the unstructured factor model.

    Action sequences are fixed up front (non-adaptive assignment), so every
    unit is exogenous through the full observation window.
    """
    actions = np.asarray(actions, dtype=np.int64)
    N, P = actions.shape
    if P != factors.n_periods:
        raise ValueError(f"actions cover {P} periods, factors define {factors.n_periods}")
    n_actions = 1 + int(actions.max()) if actions.size else 1
    n_actions = max(n_actions, max(control.at(t) for t in range(1, P + 1)) + 1)

    outcomes = np.zeros((N, P))
    for n in range(N):
        noise_rng = _unit_noise_rng(seed, n)
        draws = noise_scale * noise_rng.standard_normal(P)
        for t in range(1, P + 1):
            v = factors.unit_factors[t - 1][n]
            wvec = factors.sequence_vector(tuple(actions[n, :t]))
            if v.shape != wvec.shape:
                raise ValueError(
                    f"factor dimension mismatch at t={t}: unit factor {v.shape} vs sequence vector {wvec.shape}"
                )
            outcomes[n, t - 1] = v @ wvec + draws[t - 1]
    return Panel(
        outcomes=outcomes,
        actions=actions,
        n_actions=n_actions,
        horizon=horizon,
        control=control,
        exogenous_until=np.full(N, P, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# Parameter / factor files (JSON-friendly dicts, row-major arrays)
# ---------------------------------------------------------------------------

def rule_to_dict(rule: PolicyRule | None) -> dict | None:
    if rule is None:
        return None
    if isinstance(rule, ConstantRule):
        return {"kind": "constant", "action": rule.action}
    if isinstance(rule, ThresholdRule):
        return {"kind": "threshold", "cutoff": rule.cutoff, "below": rule.below, "above": rule.above}
    if isinstance(rule, RandomRule):
        return {"kind": "random", "actions": list(rule.actions) if rule.actions else None}
    raise PolicyError(f"unknown rule type {type(rule).__name__}")


def rule_from_dict(payload: dict | None) -> PolicyRule | None:
    if payload is None:
        return None
    kind = payload["kind"]
    if kind == "constant":
        return ConstantRule(action=int(payload["action"]))
    if kind == "threshold":
        return ThresholdRule(
            cutoff=float(payload["cutoff"]), below=int(payload["below"]), above=int(payload["above"])
        )
    if kind == "random":
        pool = payload.get("actions")
        return RandomRule(actions=tuple(int(a) for a in pool) if pool else None)
    raise PolicyError(f"unknown rule kind {kind!r}")


def system_to_dict(system: System) -> dict:
    base = {
        "dim": system.dim,
        "n_actions": system.n_actions,
        "action_vectors": system.action_vectors.tolist(),
        "state_noise": system.state_noise,
        "outcome_noise": system.outcome_noise,
        "state_transition": system.state_transition.tolist(),
        "input_map": system.input_map.tolist(),
        "readout": system.readout.tolist(),
        "feedthrough": system.feedthrough.tolist(),
    }
    base["variant"] = "ltv" if isinstance(system, LtvSystem) else "lti"
    return base


def system_from_dict(payload: dict) -> System:
    cls = LtvSystem if payload["variant"] == "ltv" else LtiSystem
    return cls(
        state_transition=np.asarray(payload["state_transition"], dtype=float),
        input_map=np.asarray(payload["input_map"], dtype=float),
        readout=np.asarray(payload["readout"], dtype=float),
        feedthrough=np.asarray(payload["feedthrough"], dtype=float),
        action_vectors=np.asarray(payload["action_vectors"], dtype=float),
        state_noise=float(payload["state_noise"]),
        outcome_noise=float(payload["outcome_noise"]),
    )


def factors_to_dict(factors: LatentFactors) -> dict:
    if isinstance(factors, LtvFactors):
        return {
            "variant": "ltv",
            "layout": "[unit][period][origin][dim]",
            "response": factors.response.tolist(),
            "action_vectors": factors.action_vectors.tolist(),
        }
    if isinstance(factors, LtiFactors):
        return {
            "variant": "lti",
            "layout": "[unit][lag][dim]",
            "response": factors.response.tolist(),
            "action_vectors": factors.action_vectors.tolist(),
        }
    return {
        "variant": "general",
        "layout": "unit_factors: [period][unit][dim]; sequence_vectors keyed by dash-joined actions",
        "unit_factors": [arr.tolist() for arr in factors.unit_factors],
        "sequence_vectors": {
            "-".join(str(a) for a in key): vec.tolist() for key, vec in factors.sequence_vectors.items()
        },
    }


def factors_from_dict(payload: dict) -> LatentFactors:
    variant = payload["variant"]
    if variant == "ltv":
        return LtvFactors(
            response=np.asarray(payload["response"], dtype=float),
            action_vectors=np.asarray(payload["action_vectors"], dtype=float),
        )
    if variant == "lti":
        return LtiFactors(
            response=np.asarray(payload["response"], dtype=float),
            action_vectors=np.asarray(payload["action_vectors"], dtype=float),
        )
    return GeneralFactors(
        unit_factors=tuple(np.asarray(a, dtype=float) for a in payload["unit_factors"]),
        sequence_vectors={
            tuple(int(a) for a in key.split("-")): np.asarray(vec, dtype=float)
            for key, vec in payload["sequence_vectors"].items()
        },
    )

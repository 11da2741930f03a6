from __future__ import annotations

import numpy as np
import pytest

from synthblip.panel import ControlSchedule, Panel
from synthblip.simulate import LtiSystem, LtvSystem


@pytest.fixture
def scalar_lti_system() -> LtiSystem:
    """d=1, B=0.5, C=1, readout 1, no feedthrough; action 1 has embedding 1,
    the control action 0 has embedding 0.  Response loadings are 1, .5, .25..."""
    return LtiSystem(
        state_transition=np.array([[[0.5]]]),
        input_map=np.array([[[1.0]]]),
        readout=np.array([[1.0]]),
        feedthrough=np.array([[0.0]]),
        action_vectors=np.array([[0.0], [1.0]]),
    )


def scalar_lti_population(n_units: int, sigma_state: float = 0.0, sigma_outcome: float = 0.0) -> LtiSystem:
    """The scalar system above replicated over several units."""
    return LtiSystem(
        state_transition=np.tile(np.array([[[0.5]]]), (n_units, 1, 1)),
        input_map=np.tile(np.array([[[1.0]]]), (n_units, 1, 1)),
        readout=np.ones((n_units, 1)),
        feedthrough=np.zeros((n_units, 1)),
        action_vectors=np.array([[0.0], [1.0]]),
        state_noise=sigma_state,
        outcome_noise=sigma_outcome,
    )


def random_ltv_system(
    rng: np.random.Generator,
    n_units: int,
    n_periods: int,
    dim: int,
    n_actions: int,
    sigma_state: float = 0.0,
    sigma_outcome: float = 0.0,
) -> LtvSystem:
    return LtvSystem(
        state_transition=rng.uniform(-0.7, 0.7, size=(n_units, n_periods, dim, dim)),
        input_map=rng.standard_normal((n_units, n_periods, dim, dim)),
        readout=rng.standard_normal((n_units, n_periods, dim)),
        feedthrough=rng.standard_normal((n_units, n_periods, dim)),
        action_vectors=rng.standard_normal((n_actions, dim)),
        state_noise=sigma_state,
        outcome_noise=sigma_outcome,
    )


def random_lti_system(
    rng: np.random.Generator,
    n_units: int,
    dim: int,
    n_actions: int,
    sigma_state: float = 0.0,
    sigma_outcome: float = 0.0,
) -> LtiSystem:
    return LtiSystem(
        state_transition=rng.uniform(-0.6, 0.6, size=(n_units, dim, dim)),
        input_map=rng.standard_normal((n_units, dim, dim)),
        readout=rng.standard_normal((n_units, dim)),
        feedthrough=rng.standard_normal((n_units, dim)),
        action_vectors=rng.standard_normal((n_actions, dim)),
        state_noise=sigma_state,
        outcome_noise=sigma_outcome,
    )


def tiny_panel() -> Panel:
    """2 units, 3 periods, 3 actions, all-zero control."""
    return Panel(
        outcomes=np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]),
        actions=np.array([[2, 1, 0], [0, 0, 0]]),
        n_actions=3,
        horizon=3,
        control=ControlSchedule.time_varying([0, 0, 0]),
        exogenous_until=np.array([3, 3]),
    )

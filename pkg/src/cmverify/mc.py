"""Monte Carlo oracle for the analytic safety probabilities.

Each trial replays the closed loop directly: starting from (cell 1, v0),
it samples an observation of the true environment from the band-local
detection distribution, feeds it to the controller, steps the dynamics,
and repeats until an absorbing state; the trial succeeds when no visited
state is bad.  Agreement with the linear-solve probability validates the
chain construction end to end.

Randomness comes from a counter-based Philox generator seeded once.  At
every step one categorical draw per trial (one per environment object in
class mode) is made for *all* trials, decided or not, so trial t consumes
exactly row t of the drawn columns: a fixed per-trial substream keyed by
trial index, independent of scheduling and of other trials' outcomes.
Categorical sampling inverts the CDF over the canonical label order.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .cm import EMPTY_LABEL, DistanceParamCM, class_label_set, normalize_column
from .chain import check_cm_labels, obs_prob_vector, relevant_band
from .safety import bad_predicate
from .scenario import (
    AgentState,
    ScenarioConfig,
    controller,
    env_name,
    initial_state,
    observation_space,
    step_dynamics,
    terminal_state,
)

# Trials still undecided after this many steps per cell are diagnosed and
# counted as failures; the shipped controller always absorbs well before.
HORIZON_CELLS_FACTOR = 10


@dataclass(frozen=True)
class SimEstimate:
    """Bernoulli estimate of the safety-satisfaction probability."""

    trials: int
    successes: int
    estimate: float
    std_error: float
    seed: int


def _code(state: AgentState, cfg: ScenarioConfig) -> int:
    return state.cell * (cfg.v_max + 1) + state.speed


def _cumulative(probs: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs)
    cum[-1] = 1.0  # guard the inverse CDF against rounding in the last bin
    return cum


def simulate(
    cfg: ScenarioConfig,
    cm: DistanceParamCM,
    spec: str = "phi_all",
    trials: int = 100_000,
    seed: int = 0,
) -> SimEstimate:
    """Estimate the probability that a run never visits a bad state."""
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")
    check_cm_labels(cfg, cm)
    pred = bad_predicate(spec, cfg)
    if pred is None:
        warnings.warn(
            f"spec {spec} does not constrain environment {env_name(cfg.env)!r}",
            stacklevel=2,
        )
        pred = lambda s: False

    obs_space = observation_space(cfg)
    n_codes = (cfg.n_cells + 1) * (cfg.v_max + 1)
    all_states = [
        AgentState(c, v)
        for c in range(1, cfg.n_cells + 1)
        for v in range(cfg.v_max + 1)
    ]

    bad_lut = np.zeros(n_codes, dtype=bool)
    term_lut = np.zeros(n_codes, dtype=bool)
    band_lut = np.zeros(n_codes, dtype=np.int64)
    next_code = np.zeros((n_codes, len(obs_space)), dtype=np.int64)
    for s in all_states:
        c = _code(s, cfg)
        bad_lut[c] = pred(s)
        term_lut[c] = terminal_state(s, cfg)
        band_lut[c] = relevant_band(s, cfg, cm.bands)
        for oi, y in enumerate(obs_space):
            next_code[c, oi] = _code(step_dynamics(s, controller(s, y, cfg), cfg), cfg)

    n_bands = len(cm.bands)
    if cfg.mode == "prop":
        cum_obs = np.stack(
            [_cumulative(obs_prob_vector(cfg, cm, b)) for b in range(n_bands)]
        )
        per_object_cum = None
        n_el = None
    else:
        on_zero = "emp" if cfg.zero_column_fallback else "error"
        true_labels = cfg.env if cfg.env else (EMPTY_LABEL,)
        n_el = len(class_label_set(cfg.classes))
        per_object_cum = [
            np.stack(
                [
                    _cumulative(np.asarray(normalize_column(cm.per_band[b], t, on_zero=on_zero).probs))
                    for b in range(n_bands)
                ]
            )
            for t in true_labels
        ]
        cum_obs = None

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    codes = np.full(trials, _code(initial_state(cfg), cfg), dtype=np.int64)
    undecided = np.ones(trials, dtype=bool)
    failed = np.zeros(trials, dtype=bool)
    horizon = HORIZON_CELLS_FACTOR * cfg.n_cells

    steps = 0
    while True:
        now_bad = undecided & bad_lut[codes]
        failed |= now_bad
        undecided &= ~now_bad
        undecided &= ~term_lut[codes]  # terminal and not bad: success
        if not undecided.any():
            break
        if steps >= horizon:
            stuck = int(undecided.sum())
            warnings.warn(
                f"{stuck} trials undecided after {horizon} steps; counted as failures"
            )
            failed |= undecided
            undecided[:] = False
            break
        bands = band_lut[codes]
        if cfg.mode == "prop":
            u = rng.random(trials)
            obs_idx = (cum_obs[bands] <= u[:, None]).sum(axis=1)
        else:
            u = rng.random((trials, len(per_object_cum)))
            obs_idx = np.zeros(trials, dtype=np.int64)
            for j, cum in enumerate(per_object_cum):
                draw = (cum[bands] <= u[:, j : j + 1]).sum(axis=1)
                obs_idx = obs_idx * n_el + draw
        codes[undecided] = next_code[codes[undecided], obs_idx[undecided]]
        steps += 1

    successes = int(trials - failed.sum())
    estimate = successes / trials
    std_error = math.sqrt(estimate * (1.0 - estimate) / trials)
    return SimEstimate(trials, successes, estimate, std_error, seed)

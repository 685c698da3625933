"""Closed-loop Markov chain of the car-pedestrian system.

Per source state, every observation the confusion matrix allows is fed
through the controller and the dynamics; probability mass from
observations landing in the same successor accumulates.  The one distance
band relevant to a transition is the ego-to-crosswalk distance of the
source state.  Terminal outcomes self-loop with probability one so that
always-properties have well-defined infinite-trace semantics.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cm import (
    EMPTY_LABEL,
    DistanceBands,
    DistanceParamCM,
    band_for_distance,
    class_label_set,
    normalize_column,
    prop_label_for,
    prop_label_set,
)
from .scenario import (
    PED_CLASS,
    AgentState,
    ScenarioConfig,
    controller,
    env_name,
    initial_state,
    observation_space,
    step_dynamics,
    terminal_state,
)

ROW_SUM_TOL = 1e-9


class NumericError(ArithmeticError):
    """A probability computation broke its invariants."""


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """Explicit-state chain over (cell, speed) with a fixed true environment.

    States are indexed in breadth-first discovery order from the initial
    state; every state is reachable with positive probability.  ``trans``
    holds per-state (target index, probability) pairs sorted by target.
    """

    cfg: ScenarioConfig
    states: tuple[AgentState, ...]
    trans: tuple[tuple[tuple[int, float], ...], ...]
    labels: tuple[frozenset[str], ...]
    init: int = 0

    @property
    def env(self) -> tuple[str, ...]:
        return self.cfg.env

    def validate(self, tol: float = ROW_SUM_TOL) -> None:
        for i, row in enumerate(self.trans):
            if any(p < 0 or p > 1 for _, p in row):
                raise NumericError(f"state {i}: probability outside [0, 1]")
            total = sum(p for _, p in row)
            if abs(total - 1.0) > tol:
                raise NumericError(f"state {i}: outgoing mass {total!r} != 1")


def relevant_band(state: AgentState, cfg: ScenarioConfig, bands: DistanceBands | None = None) -> int:
    """Distance band steering a transition out of ``state``.

    Uses the ego-to-crosswalk distance in meters; at or past the
    crosswalk the nearest band applies.
    """
    if bands is None:
        bands = cfg.bands
    cells_ahead = max(cfg.crosswalk_cell - state.cell, 1)
    return band_for_distance(bands, cells_ahead * cfg.cell_length_m)


def check_cm_labels(cfg: ScenarioConfig, cm: DistanceParamCM) -> None:
    expected = (
        prop_label_set(cfg.classes) if cfg.mode == "prop" else class_label_set(cfg.classes)
    )
    if cm.labels.names != expected.names:
        raise ValueError(
            f"confusion matrix labels {cm.labels.names} do not match "
            f"{cfg.mode}-mode labels {expected.names}"
        )


def obs_prob_vector(cfg: ScenarioConfig, cm: DistanceParamCM, band: int) -> np.ndarray:
    """Probability of each observation in canonical order at one band."""
    matrix = cm.per_band[band]
    on_zero = "emp" if cfg.zero_column_fallback else "error"
    if cfg.mode == "prop":
        env_label = prop_label_for(cm.labels, cfg.env)
        return np.array(normalize_column(matrix, env_label, on_zero=on_zero).probs)
    true_labels = cfg.env if cfg.env else (EMPTY_LABEL,)
    dists = [normalize_column(matrix, t, on_zero=on_zero) for t in true_labels]
    obs = observation_space(cfg)
    vec = np.empty(len(obs))
    for i, y in enumerate(obs):
        p = 1.0
        for dist, y_i in zip(dists, y):
            p *= dist.prob(y_i)
        vec[i] = p
    return vec


def _successor_mass(state, cfg, vec, obs_space) -> dict[AgentState, float]:
    acc: dict[AgentState, float] = {}
    for y, p in zip(obs_space, vec):
        if p == 0.0:
            continue
        nxt = step_dynamics(state, controller(state, y, cfg), cfg)
        acc[nxt] = acc.get(nxt, 0.0) + float(p)
    return acc


def successor_mass(state: AgentState, cfg: ScenarioConfig, cm: DistanceParamCM) -> dict[AgentState, float]:
    """Per-successor transition probability out of one non-terminal state."""
    check_cm_labels(cfg, cm)
    band = relevant_band(state, cfg, cm.bands)
    vec = obs_prob_vector(cfg, cm, band)
    return _successor_mass(state, cfg, vec, observation_space(cfg))


def transition_prob_prop(s1: AgentState, s2: AgentState, cm: DistanceParamCM, cfg: ScenarioConfig) -> float:
    """Probability of moving s1 -> s2: total mass of the proposition sets
    whose observation steers the controller there."""
    if cfg.mode != "prop":
        raise ValueError("transition_prob_prop requires a prop-mode config")
    return successor_mass(s1, cfg, cm).get(s2, 0.0)


def transition_prob_class(s1: AgentState, s2: AgentState, cm: DistanceParamCM, cfg: ScenarioConfig) -> float:
    """Probability of moving s1 -> s2 with per-object detections drawn
    independently, summing products over the steering observation tuples."""
    if cfg.mode != "class":
        raise ValueError("transition_prob_class requires a class-mode config")
    return successor_mass(s1, cfg, cm).get(s2, 0.0)


def state_labels(state: AgentState, cfg: ScenarioConfig) -> frozenset[str]:
    k = cfg.crosswalk_cell
    out = set()
    if PED_CLASS in cfg.env:
        out.add("ped_env")
    if state.cell == k - 1 and state.speed == 0:
        out.add("stopped_at_cw")
    if state.cell >= k:
        out.add("past_cw")
    if state.speed == 0 and state.cell <= k - 2:
        out.add("stopped_early")
    return frozenset(out)


def build_chain(cfg: ScenarioConfig, cm: DistanceParamCM) -> MarkovChain:
    """Breadth-first expansion from (cell 1, v0) under the configured mode."""
    check_cm_labels(cfg, cm)
    obs_space = observation_space(cfg)
    vec_cache: dict[int, np.ndarray] = {}

    init = initial_state(cfg)
    index: dict[AgentState, int] = {init: 0}
    states: list[AgentState] = [init]
    rows: list[tuple[tuple[int, float], ...]] = []
    queue = deque([init])
    while queue:
        s = queue.popleft()
        if terminal_state(s, cfg):
            rows.append(((index[s], 1.0),))
            continue
        band = relevant_band(s, cfg, cm.bands)
        if band not in vec_cache:
            vec_cache[band] = obs_prob_vector(cfg, cm, band)
        acc = _successor_mass(s, cfg, vec_cache[band], obs_space)
        total = sum(acc.values())
        if abs(total - 1.0) > ROW_SUM_TOL:
            raise NumericError(f"state {s}: outgoing mass {total!r} != 1")
        for t in acc:
            if t not in index:
                index[t] = len(states)
                states.append(t)
                queue.append(t)
        rows.append(tuple(sorted((index[t], p) for t, p in acc.items())))

    assert len(states) <= cfg.n_cells * (cfg.v_max + 1)
    chain = MarkovChain(
        cfg=cfg,
        states=tuple(states),
        trans=tuple(rows),
        labels=tuple(state_labels(s, cfg) for s in states),
    )
    chain.validate()
    return chain


# ---------------------------------------------------------------------------
# Explicit-state files (transitions / labels / state map), for cross-checking
# with external probabilistic model checkers.
# ---------------------------------------------------------------------------

TRANSITIONS_FILE = "transitions.tra"
LABELS_FILE = "labels.lab"
STATES_FILE = "states.sta"


@dataclass(frozen=True)
class ExplicitChain:
    """Round-trip image of the exported files."""

    states: tuple[tuple[int, int, str], ...]
    trans: tuple[tuple[tuple[int, float], ...], ...]
    init: int
    label_map: dict[str, frozenset[int]]


def write_explicit_files(chain: MarkovChain, bad: frozenset[int], out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    tra = out / TRANSITIONS_FILE
    lines = ["dtmc"]
    for i, row in enumerate(chain.trans):
        for j, p in row:
            lines.append(f"{i} {j} {p:.17g}")
    tra.write_text("\n".join(lines) + "\n", encoding="utf-8")

    lab = out / LABELS_FILE
    lines = ["#DECLARATION init bad #END", f"{chain.init} init"]
    for i in sorted(bad):
        lines.append(f"{i} bad")
    lab.write_text("\n".join(lines) + "\n", encoding="utf-8")

    sta = out / STATES_FILE
    name = env_name(chain.env)
    lines = [f"{i} {s.cell} {s.speed} {name}" for i, s in enumerate(chain.states)]
    sta.write_text("\n".join(lines) + "\n", encoding="utf-8")

    return {"transitions": tra, "labels": lab, "states": sta}


def read_explicit_files(out_dir) -> ExplicitChain:
    out = Path(out_dir)

    lines = (out / TRANSITIONS_FILE).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "dtmc":
        raise ValueError(f"{TRANSITIONS_FILE}: first line must be 'dtmc'")
    edges: dict[int, list[tuple[int, float]]] = {}
    n = 0
    for ln in lines[1:]:
        src_s, dst_s, p_s = ln.split()
        src, dst, p = int(src_s), int(dst_s), float(p_s)
        edges.setdefault(src, []).append((dst, p))
        n = max(n, src + 1, dst + 1)
    trans = tuple(tuple(edges.get(i, ())) for i in range(n))

    lines = (out / LABELS_FILE).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#DECLARATION"):
        raise ValueError(f"{LABELS_FILE}: missing #DECLARATION header")
    label_map: dict[str, set[int]] = {}
    for ln in lines[1:]:
        idx_s, label = ln.split()
        label_map.setdefault(label, set()).add(int(idx_s))
    inits = label_map.get("init", set())
    if len(inits) != 1:
        raise ValueError(f"{LABELS_FILE}: need exactly one init state, got {sorted(inits)}")

    lines = (out / STATES_FILE).read_text(encoding="utf-8").splitlines()
    states = []
    for i, ln in enumerate(lines):
        idx_s, cell_s, speed_s, name = ln.split()
        if int(idx_s) != i:
            raise ValueError(f"{STATES_FILE}: line {i + 1}: bad index {idx_s}")
        states.append((int(cell_s), int(speed_s), name))

    return ExplicitChain(
        states=tuple(states),
        trans=trans,
        init=next(iter(inits)),
        label_map={k: frozenset(v) for k, v in label_map.items()},
    )

"""Discrete car-pedestrian scenario.

A car advances along cells 1..n_cells toward a crosswalk cell; the true
environment at the crosswalk is a fixed set of objects.  The car moves at
its current integer speed, then adjusts speed by at most one.  A braking
controller must bring it to rest exactly one cell before the crosswalk
whenever a pedestrian is observed, and never stop otherwise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Union

from .cm import (
    EMPTY_LABEL,
    DistanceBands,
    class_label_set,
    prop_label_set,
    prop_members,
)

# Class whose presence obliges the car to stop.
PED_CLASS = "ped"

ACCELS = (-1, 0, 1)

# An observation is either a set of present classes (prop mode) or a
# per-object tuple of class names, possibly the empty label (class mode).
Observation = Union[frozenset, tuple]


class ConfigError(ValueError):
    """Scenario configuration failed validation."""


class AgentState(NamedTuple):
    cell: int
    speed: int


@dataclass(frozen=True)
class ScenarioConfig:
    """Geometry, dynamics limits, environment, and evaluation mode."""

    n_cells: int = 10
    crosswalk_cell: int = 8
    v_max: int = 2
    cell_length_m: float = 10.0
    v0: int = 1
    mode: str = "class"
    band_edges_m: tuple[float, ...] = (10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0)
    env: tuple[str, ...] = (PED_CLASS,)
    classes: tuple[str, ...] = (PED_CLASS, "obs")
    cruise_speed: int | None = None
    zero_column_fallback: bool = False
    cm_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "band_edges_m", tuple(float(e) for e in self.band_edges_m))
        object.__setattr__(self, "env", tuple(self.env))
        object.__setattr__(self, "classes", tuple(self.classes))
        problems = []
        if self.n_cells < 3:
            problems.append(f"n_cells must be at least 3 (got {self.n_cells})")
        if not 3 <= self.crosswalk_cell <= self.n_cells:
            problems.append(
                f"crosswalk_cell must satisfy 3 <= crosswalk_cell <= n_cells "
                f"(got crosswalk_cell={self.crosswalk_cell}, n_cells={self.n_cells})"
            )
        if self.v_max < 1:
            problems.append(f"v_max must be at least 1 (got {self.v_max})")
        if not 1 <= self.v0 <= self.v_max:
            problems.append(
                f"v0 must satisfy 1 <= v0 <= v_max (got v0={self.v0}, v_max={self.v_max})"
            )
        if not self.cell_length_m > 0:
            problems.append(f"cell_length_m must be positive (got {self.cell_length_m})")
        if self.mode not in ("class", "prop"):
            problems.append(f"mode must be 'class' or 'prop' (got {self.mode!r})")
        try:
            class_label_set(self.classes)
        except ValueError as e:
            problems.append(f"classes: {e}")
        else:
            unknown = [c for c in self.env if c not in self.classes]
            if unknown:
                problems.append(
                    f"env contains classes not in classes: {unknown} (classes={list(self.classes)})"
                )
        try:
            DistanceBands(self.band_edges_m)
        except ValueError as e:
            problems.append(f"band_edges_m: {e}")
        if self.cruise_speed is not None and not 1 <= self.cruise_speed <= self.v_max:
            problems.append(
                f"cruise_speed must satisfy 1 <= cruise_speed <= v_max (got {self.cruise_speed})"
            )
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def cruise(self) -> int:
        # Holding the initial speed (rather than racing to v_max) is what
        # keeps satisfaction monotone in v0: accelerating on every missed
        # detection drives slow starters into stop-infeasibility early.
        return self.v0 if self.cruise_speed is None else self.cruise_speed

    @property
    def bands(self) -> DistanceBands:
        return DistanceBands(self.band_edges_m)


def env_name(env: tuple[str, ...]) -> str:
    """Canonical name of an environment: "+"-joined classes, or the empty label."""
    return "+".join(env) if env else EMPTY_LABEL


def parse_env_name(name: str) -> tuple[str, ...]:
    return () if name == EMPTY_LABEL else tuple(name.split("+"))


def initial_state(cfg: ScenarioConfig) -> AgentState:
    return AgentState(1, cfg.v0)


def step_dynamics(state: AgentState, accel: int, cfg: ScenarioConfig) -> AgentState:
    """Advance one step: move at the current speed, then change speed.

    The position update uses the pre-update speed, so decelerating from
    (cell, 1) lands at (cell+1, 0).  Cell and speed clamp to their ranges.
    """
    if accel not in ACCELS:
        raise ValueError(f"accel must be one of {ACCELS}, got {accel}")
    cell = min(state.cell + state.speed, cfg.n_cells)
    speed = min(max(state.speed + accel, 0), cfg.v_max)
    return AgentState(cell, speed)


def observes_ped(obs: Observation) -> bool:
    return PED_CLASS in obs


def observation_space(cfg: ScenarioConfig) -> tuple[Observation, ...]:
    """All observations perception can produce for the configured environment.

    Prop mode: every subset of the class set, ordered like the
    proposition label set (empty set last).  Class mode: every tuple of
    class-or-empty labels, one slot per environment object (a single
    pseudo-object when the environment is empty), in mixed-radix order.
    """
    if cfg.mode == "prop":
        names = prop_label_set(cfg.classes).names
        return tuple(prop_members(n) for n in names)
    n_objects = max(len(cfg.env), 1)
    element_names = class_label_set(cfg.classes).names
    out: list[tuple[str, ...]] = [()]
    for _ in range(n_objects):
        out = [t + (e,) for t in out for e in element_names]
    return tuple(out)


@lru_cache(maxsize=None)
def _stop_feasible_set(n_cells: int, crosswalk_cell: int, v_max: int) -> frozenset[AgentState]:
    """States from which a legal stop at (crosswalk-1, 0) is reachable.

    Legal paths stay strictly before the crosswalk and never rest at an
    earlier cell.  Computed as a backward fixpoint over the one-step
    dynamics, which finds exactly the states a forward search from would
    reach the stop.
    """
    k = crosswalk_cell
    target = AgentState(k - 1, 0)
    allowed = {target} | {
        AgentState(c, v)
        for c in range(1, k)
        for v in range(1, v_max + 1)
    }
    feasible = {target}
    changed = True
    while changed:
        changed = False
        for s in allowed:
            if s in feasible:
                continue
            for a in ACCELS:
                nxt = AgentState(
                    min(s.cell + s.speed, n_cells),
                    min(max(s.speed + a, 0), v_max),
                )
                if nxt in feasible:
                    feasible.add(s)
                    changed = True
                    break
    return frozenset(feasible)


def stop_feasible(state: AgentState, cfg: ScenarioConfig) -> bool:
    """Whether the car can still come to rest exactly before the crosswalk."""
    return state in _stop_feasible_set(cfg.n_cells, cfg.crosswalk_cell, cfg.v_max)


def controller(state: AgentState, obs: Observation, cfg: ScenarioConfig) -> int:
    """Deterministic control policy reacting to the current observation.

    At or past the crosswalk, or once stopped at the cell before it, the
    car holds.  On a pedestrian observation it picks the acceleration
    (preferring to brake) that keeps a stop exactly before the crosswalk
    reachable, falling back to full braking when none does.  Otherwise it
    accelerates toward the cruise speed; this branch never produces a
    standstill, since the speed only rises from at least zero.
    """
    k = cfg.crosswalk_cell
    if state.cell >= k or (state.cell == k - 1 and state.speed == 0):
        return 0
    if observes_ped(obs):
        for a in ACCELS:
            if stop_feasible(step_dynamics(state, a, cfg), cfg):
                return a
        return -1
    return 1 if state.speed < cfg.cruise else 0


def terminal_state(state: AgentState, cfg: ScenarioConfig) -> bool:
    """States from which the controller never moves again, for any observation.

    Stopped at the cell before the crosswalk, at the final cell, or
    stopped at or past the crosswalk.
    """
    if state.cell == cfg.n_cells:
        return True
    return state.speed == 0 and state.cell >= cfg.crosswalk_cell - 1


# ---------------------------------------------------------------------------
# JSON configuration
# ---------------------------------------------------------------------------

_BASE_KEYS = {
    "n_cells", "crosswalk_cell", "v_max", "cell_length_m", "v0", "mode",
    "band_edges_m", "env", "classes", "cruise_speed", "zero_column_fallback",
    "cm_path",
}
# Consumed by the sweep/simulate command lanes, not by the scenario itself.
_EXTRA_KEYS = {"class_cm_path", "prop_cm_path", "v_max_list", "envs", "trials", "seed"}


def config_from_dict(raw: dict) -> ScenarioConfig:
    unknown = sorted(set(raw) - _BASE_KEYS - _EXTRA_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for key in _BASE_KEYS & set(raw):
        value = raw[key]
        if key in ("env", "classes", "band_edges_m"):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{key} must be a list (got {type(value).__name__})")
            value = tuple(value)
        kwargs[key] = value
    try:
        return ScenarioConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def load_config(path) -> tuple[ScenarioConfig, dict]:
    """Parse a JSON config file; returns the scenario plus the raw dict."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(raw), raw

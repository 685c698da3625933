"""Safety probabilities on the closed-loop chain.

The three requirements are all invariants: never rest at the stop cell
when no pedestrian waits, never enter the crosswalk zone unstopped when
one does, and never rest anywhere earlier.  Each induces a bad-state set;
the satisfaction probability is one minus the probability of ever
reaching a bad state, computed by making bad states absorbing and solving
the resulting linear system.
"""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .cm import DistanceParamCM, as_single_band
from .chain import MarkovChain, NumericError, build_chain
from .scenario import (
    PED_CLASS,
    AgentState,
    ScenarioConfig,
    env_name,
    initial_state,
    stop_feasible,
)

SPEC_NAMES = ("phi1", "phi2", "phi3", "phi_all")

# Sweep variants: both label families, aggregated and distance-parametrized.
VARIANTS = ("class", "class_dist", "prop", "prop_dist")

VI_TOL = 1e-12
VI_MAX_ITER = 10_000_000
# Above this many transient states, "auto" switches from elimination to
# value iteration.
GAUSS_MAX_STATES = 4096


def bad_predicate(spec: str, cfg: ScenarioConfig) -> Callable[[AgentState], bool] | None:
    """State predicate violating ``spec``, or None when the spec does not
    constrain the configured environment."""
    if spec not in SPEC_NAMES:
        raise ValueError(f"unknown spec {spec!r} (have: {', '.join(SPEC_NAMES)})")
    k = cfg.crosswalk_cell
    has_ped = PED_CLASS in cfg.env

    def phi1(s: AgentState) -> bool:
        return s.cell == k - 1 and s.speed == 0

    def phi2(s: AgentState) -> bool:
        return s.cell >= k - 1 and not (s.cell == k - 1 and s.speed == 0)

    def phi3(s: AgentState) -> bool:
        return s.speed == 0 and s.cell <= k - 2

    if spec == "phi1":
        return None if has_ped else phi1
    if spec == "phi2":
        return phi2 if has_ped else None
    if spec == "phi3":
        return phi3
    if has_ped:
        return lambda s: phi2(s) or phi3(s)
    return lambda s: phi1(s) or phi3(s)


def bad_states(chain: MarkovChain, spec: str) -> frozenset[int]:
    """Indices of chain states violating ``spec`` for the chain's environment.

    Asking for a spec whose guard does not apply (a pedestrian spec on a
    pedestrian-free environment, or vice versa) warns and returns the
    empty set.
    """
    pred = bad_predicate(spec, chain.cfg)
    if pred is None:
        warnings.warn(
            f"spec {spec} does not constrain environment "
            f"{env_name(chain.env)!r}; no bad states",
            stacklevel=2,
        )
        return frozenset()
    return frozenset(i for i, s in enumerate(chain.states) if pred(s))


@dataclass(frozen=True)
class SatisfactionResult:
    """Probability of never visiting a bad state, plus solve diagnostics."""

    probability: float
    residual: float
    transient_count: int
    absorbing_count: int
    solver: str


def _reach_linear_system(chain, bad):
    """Transient states that can reach ``bad``, with their one-step matrix."""
    n = len(chain.states)
    preds: list[list[int]] = [[] for _ in range(n)]
    for i, row in enumerate(chain.trans):
        if i in bad:
            continue  # bad states are made absorbing
        for j, p in row:
            if p > 0:
                preds[j].append(i)
    seen = set(bad)
    queue = deque(bad)
    while queue:
        j = queue.popleft()
        for i in preds[j]:
            if i not in seen:
                seen.add(i)
                queue.append(i)
    transient = sorted(seen - bad)
    pos = {t: i for i, t in enumerate(transient)}
    m = len(transient)
    a = np.zeros((m, m))
    b = np.zeros(m)
    for t in transient:
        for j, p in chain.trans[t]:
            if j in bad:
                b[pos[t]] += p
            elif j in pos:
                a[pos[t], pos[j]] += p
            # mass flowing to states that cannot reach bad is lost for good
    return transient, pos, a, b


def _value_iteration(a: np.ndarray, b: np.ndarray, tol: float) -> np.ndarray:
    x = np.zeros_like(b)
    for _ in range(VI_MAX_ITER):
        nxt = b + a @ x
        if np.max(np.abs(nxt - x)) <= tol:
            return nxt
        x = nxt
    raise NumericError(f"value iteration did not converge within {VI_MAX_ITER} sweeps")


def prob_safe(
    chain: MarkovChain,
    bad: frozenset[int],
    *,
    solver: str = "auto",
    vi_tol: float = VI_TOL,
) -> SatisfactionResult:
    """One minus the probability of ever reaching ``bad`` from the start.

    Bad states become absorbing; states that cannot reach the bad set at
    all are found by backward search, and the remaining transient states
    give a linear system solved by Gaussian elimination with partial
    pivoting (``solver="gauss"``) or by value iteration (``"vi"``);
    ``"auto"`` picks elimination up to a size threshold.
    """
    if solver not in ("auto", "gauss", "vi"):
        raise ValueError(f"unknown solver {solver!r}")
    chain.validate()
    bad = frozenset(bad)
    absorbing = set(bad)
    for i, row in enumerate(chain.trans):
        if row == ((i, 1.0),):
            absorbing.add(i)

    if chain.init in bad:
        return SatisfactionResult(0.0, 0.0, 0, len(absorbing), "trivial")

    transient, pos, a, b = _reach_linear_system(chain, bad)
    if chain.init not in pos:
        return SatisfactionResult(1.0, 0.0, len(transient), len(absorbing), "trivial")

    if solver == "auto":
        solver = "gauss" if len(transient) <= GAUSS_MAX_STATES else "vi"
    if solver == "gauss":
        system = np.eye(len(transient)) - a
        try:
            x = np.linalg.solve(system, b)
        except np.linalg.LinAlgError:
            warnings.warn("singular reachability system; falling back to least squares")
            x = np.linalg.lstsq(system, b, rcond=None)[0]
    else:
        x = _value_iteration(a, b, vi_tol)

    residual = float(np.max(np.abs((np.eye(len(transient)) - a) @ x - b)))
    p_bad = float(x[pos[chain.init]])
    probability = min(1.0, max(0.0, 1.0 - p_bad))
    return SatisfactionResult(probability, residual, len(transient), len(absorbing), solver)


@dataclass(frozen=True)
class SweepRow:
    variant: str
    env: str
    v_max: int
    v0: int
    prob: float


def variant_cm(variant: str, class_cm: DistanceParamCM, prop_cm: DistanceParamCM) -> tuple[str, DistanceParamCM]:
    """(mode, matrix) for one sweep variant."""
    if variant == "class":
        return "class", as_single_band(class_cm)
    if variant == "class_dist":
        return "class", class_cm
    if variant == "prop":
        return "prop", as_single_band(prop_cm)
    if variant == "prop_dist":
        return "prop", prop_cm
    raise ValueError(f"unknown variant {variant!r}")


def sweep_grid(
    base_cfg: ScenarioConfig,
    envs: Sequence[Sequence[str]],
    v_max_list: Sequence[int],
) -> list[ScenarioConfig]:
    """Scenario per (env, v_max, feasible v0), in deterministic order."""
    out = []
    for env in envs:
        for v_max in sorted(v_max_list):
            for v0 in range(1, v_max + 1):
                cfg = replace(base_cfg, env=tuple(env), v_max=v_max, v0=v0)
                if not stop_feasible(initial_state(cfg), cfg):
                    continue
                out.append(cfg)
    return out


def sweep(
    base_cfg: ScenarioConfig,
    class_cm: DistanceParamCM,
    prop_cm: DistanceParamCM,
    envs: Sequence[Sequence[str]],
    v_max_list: Sequence[int],
    spec: str = "phi_all",
) -> list[SweepRow]:
    """Satisfaction probability over variants x environments x speeds."""
    rows = []
    for variant in VARIANTS:
        mode, cm = variant_cm(variant, class_cm, prop_cm)
        for cfg in sweep_grid(replace(base_cfg, mode=mode), envs, v_max_list):
            chain = build_chain(cfg, cm)
            result = prob_safe(chain, bad_states(chain, spec))
            rows.append(
                SweepRow(variant, env_name(cfg.env), cfg.v_max, cfg.v0, result.probability)
            )
    rows.sort(key=lambda r: (r.variant, r.env, r.v_max, r.v0))
    return rows

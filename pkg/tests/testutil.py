"""Shared helpers: identity matrices, random chains, and oracle solvers."""
from __future__ import annotations

import numpy as np

from cmverify.cm import (
    ConfusionMatrix,
    DistanceBands,
    DistanceParamCM,
    class_label_set,
    prop_label_set,
)
from cmverify.chain import MarkovChain
from cmverify.scenario import AgentState, ScenarioConfig

DEFAULT_BANDS = DistanceBands((10, 20, 30, 40, 50, 60, 70, 80, 90, 100))


def identity_cm(labels, bands=DEFAULT_BANDS, scale=100) -> DistanceParamCM:
    eye = np.eye(len(labels), dtype=np.int64) * scale
    return DistanceParamCM(bands, tuple(ConfusionMatrix(labels, eye) for _ in bands.edges))


def identity_class_cm(classes=("ped", "obs"), bands=DEFAULT_BANDS) -> DistanceParamCM:
    return identity_cm(class_label_set(classes), bands)


def identity_prop_cm(classes=("ped", "obs"), bands=DEFAULT_BANDS) -> DistanceParamCM:
    return identity_cm(prop_label_set(classes), bands)


def make_chain(trans, init=0) -> MarkovChain:
    """Wrap a raw transition structure in a MarkovChain for solver tests."""
    n = len(trans)
    states = tuple(AgentState(1 + i, 0) for i in range(n))
    return MarkovChain(
        cfg=ScenarioConfig(n_cells=max(n + 3, 10), crosswalk_cell=max(n + 1, 3)),
        states=states,
        trans=tuple(tuple(row) for row in trans),
        labels=tuple(frozenset() for _ in range(n)),
        init=init,
    )


def random_chain(rng: np.random.Generator, max_states: int = 40):
    """Random row-stochastic chain with some absorbing states and a bad set.

    Every transient state keeps a positive-probability route to an
    absorbing state, so absorption is certain and all solvers apply.
    """
    n = int(rng.integers(4, max_states + 1))
    n_absorbing = int(rng.integers(2, max(3, n // 3) + 1))
    absorbing = list(rng.choice(n, size=n_absorbing, replace=False))
    trans = []
    for i in range(n):
        if i in absorbing:
            trans.append(((i, 1.0),))
            continue
        k = int(rng.integers(1, min(5, n) + 1))
        targets = set(rng.choice(n, size=k, replace=False))
        targets.add(int(rng.choice(absorbing)))  # guarantees eventual absorption
        targets = sorted(targets)
        weights = rng.random(len(targets)) + 1e-3
        weights /= weights.sum()
        trans.append(tuple((t, float(w)) for t, w in zip(targets, weights)))
    n_bad = int(rng.integers(1, n_absorbing + 1))
    bad = frozenset(int(b) for b in rng.choice(absorbing, size=n_bad, replace=False))
    init = int(rng.choice([i for i in range(n) if i not in absorbing]))
    return make_chain(trans, init), bad


def path_enum_reach(trans, init, bad, eps=1e-10) -> float:
    """Probability of ever reaching ``bad``, by forward mass propagation.

    Pushes the initial unit mass through the chain until all but ``eps``
    of it is resolved (absorbed in bad, or provably unable to reach bad).
    Independent of any linear-algebra solver.
    """
    n = len(trans)
    # states with no route to bad resolve immediately
    preds = [[] for _ in range(n)]
    for i, row in enumerate(trans):
        if i in bad:
            continue
        for j, p in row:
            if p > 0:
                preds[j].append(i)
    can_reach = set(bad)
    frontier = list(bad)
    while frontier:
        j = frontier.pop()
        for i in preds[j]:
            if i not in can_reach:
                can_reach.add(i)
                frontier.append(i)

    if init in bad:
        return 1.0
    if init not in can_reach:
        return 0.0
    mass = {init: 1.0}
    hit = 0.0
    while sum(mass.values()) > eps:
        nxt: dict[int, float] = {}
        for s, m in mass.items():
            for j, p in trans[s]:
                if p == 0.0:
                    continue
                if j in bad:
                    hit += m * p
                elif j in can_reach:
                    nxt[j] = nxt.get(j, 0.0) + m * p
                # mass escaping can_reach never comes back
        mass = nxt
    return hit

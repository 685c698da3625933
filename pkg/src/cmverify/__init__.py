"""Distance-parametrized detection evaluation and closed-loop safety checking.

Builds class-labeled and proposition-labeled confusion matrices from
object-detection records, synthesizes the Markov chain of a discrete
car-pedestrian system under a deterministic braking controller, computes
the probability that runs satisfy the safety requirements, and
cross-checks the result with a seeded Monte Carlo simulator.
"""

__version__ = "0.1.0"

from .cm import (  # noqa: F401
    EMPTY_LABEL,
    ColumnDistribution,
    ConfusionMatrix,
    DistanceBands,
    DistanceParamCM,
    LabelSet,
    aggregate,
    as_single_band,
    band_for_distance,
    class_label_set,
    load_fixture,
    normalize_column,
    parse_fixture,
    prop_label_set,
    render_fixture,
    save_fixture,
)
from .bundled import load_bundled  # noqa: F401
from .chain import MarkovChain, build_chain, relevant_band  # noqa: F401
from .ingest import (  # noqa: F401
    DetectionRecord,
    PredictionRecord,
    build_class_cm,
    build_prop_cm,
    iou,
    match_frame,
)
from .mc import SimEstimate, simulate  # noqa: F401
from .safety import SatisfactionResult, bad_states, prob_safe, sweep  # noqa: F401
from .scenario import (  # noqa: F401
    AgentState,
    ScenarioConfig,
    controller,
    observation_space,
    step_dynamics,
    stop_feasible,
)

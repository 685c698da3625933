"""Confusion-matrix core.

Label sets (object classes or sets of object-presence propositions),
distance bands, per-band count matrices, and the column-normalized
distributions that turn evaluation counts into per-step detection
probabilities.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Iterable, Sequence, Union

import numpy as np

# Reserved label for "no object present / nothing detected".
EMPTY_LABEL = "emp"

# A normalized column must sum to 1 within this tolerance.
COLUMN_SUM_TOL = 1e-12


class FixtureFormatError(ValueError):
    """A confusion-matrix fixture file is malformed."""


class ZeroColumnError(ValueError):
    """A requested true-label column contains no samples."""


@dataclass(frozen=True)
class LabelSet:
    """Ordered label universe of a confusion matrix.

    ``kind == "class"``: one label per object class, the empty label last.
    ``kind == "prop"``: one label per subset of the object classes;
    non-empty subsets are ordered by (cardinality, member order) and
    serialized as "+"-joined member names; the empty subset is serialized
    as the empty label and comes last.
    """

    kind: str
    names: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in ("class", "prop"):
            raise ValueError(f"unknown label kind {self.kind!r}")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate label names in {self.names}")
        if not self.names or self.names[-1] != EMPTY_LABEL:
            raise ValueError(f"label set must end with {EMPTY_LABEL!r}: {self.names}")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown label {name!r} (labels: {', '.join(self.names)})") from None


def class_label_set(classes: Sequence[str]) -> LabelSet:
    """Label set over object classes, with the empty label appended last."""
    _check_classes(classes)
    return LabelSet("class", tuple(classes) + (EMPTY_LABEL,))


def prop_label_set(classes: Sequence[str]) -> LabelSet:
    """Label set over all subsets of the object classes.

    Non-empty subsets come first, ordered by (cardinality, member order
    as given in ``classes``); the empty subset is last, named ``emp``.
    """
    _check_classes(classes)
    names = []
    for r in range(1, len(classes) + 1):
        for combo in combinations(range(len(classes)), r):
            names.append("+".join(classes[i] for i in combo))
    names.append(EMPTY_LABEL)
    return LabelSet("prop", tuple(names))


def _check_classes(classes: Sequence[str]) -> None:
    if not classes:
        raise ValueError("need at least one object class")
    if EMPTY_LABEL in classes:
        raise ValueError(f"{EMPTY_LABEL!r} is reserved and may not be an object class")
    if len(set(classes)) != len(classes):
        raise ValueError(f"duplicate object classes in {classes}")
    for c in classes:
        if "+" in c or "," in c or not c.strip():
            raise ValueError(f"invalid class name {c!r}")


def prop_members(name: str) -> frozenset[str]:
    """Member classes of a serialized proposition-set label."""
    return frozenset() if name == EMPTY_LABEL else frozenset(name.split("+"))


@lru_cache(maxsize=None)
def _members_to_name(labels: LabelSet) -> dict[frozenset, str]:
    return {prop_members(n): n for n in labels.names}


def prop_label_for(labels: LabelSet, members: Iterable[str]) -> str:
    """Canonical label name for a set of present classes."""
    key = frozenset(members)
    try:
        return _members_to_name(labels)[key]
    except KeyError:
        raise KeyError(f"no label for class set {sorted(key)}") from None


@dataclass(frozen=True)
class DistanceBands:
    """Strictly increasing band edges in meters.

    Band k covers the half-open range (edges[k-1], edges[k]]; band 0
    covers (0, edges[0]].  Distances beyond the last edge clamp to the
    final band.
    """

    edges: tuple[float, ...]

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        if not edges:
            raise ValueError("need at least one band edge")
        if any(not math.isfinite(e) or e <= 0 for e in edges):
            raise ValueError(f"band edges must be finite and positive: {edges}")
        if any(a >= b for a, b in zip(edges, edges[1:])):
            raise ValueError(f"band edges must be strictly increasing: {edges}")
        object.__setattr__(self, "edges", edges)

    def __len__(self) -> int:
        return len(self.edges)


def band_for_distance(bands: DistanceBands, distance_m: float) -> int:
    """Band index containing a positive, finite distance."""
    d = float(distance_m)
    if not math.isfinite(d) or d <= 0:
        raise ValueError(f"distance must be positive and finite, got {distance_m!r}")
    i = bisect.bisect_left(bands.edges, d)
    return min(i, len(bands.edges) - 1)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Square count matrix over a label set.

    Rows are predicted labels, columns are true labels; the sum of column
    j is the number of evaluation items whose true label is j.
    """

    labels: LabelSet
    counts: np.ndarray

    def __post_init__(self):
        arr = np.array(self.counts, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"counts must be square, got shape {arr.shape}")
        if arr.shape[0] != len(self.labels):
            raise ValueError(
                f"counts shape {arr.shape} does not match {len(self.labels)} labels"
            )
        if not np.array_equal(arr, np.asarray(self.counts)):
            raise ValueError("counts must be integers")
        if np.any(arr < 0):
            raise ValueError("counts must be nonnegative")
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        # label names carry all semantics; the kind tag is advisory
        return self.labels.names == other.labels.names and np.array_equal(
            self.counts, other.counts
        )

    def column_sum(self, true_label: str) -> int:
        return int(self.counts[:, self.labels.index(true_label)].sum())


@dataclass(frozen=True, eq=False)
class ColumnDistribution:
    """Probability of each predicted label given one true label."""

    true_label: str
    labels: LabelSet
    probs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=np.float64)
        if arr.shape != (len(self.labels),):
            raise ValueError(f"probs shape {arr.shape} does not match labels")
        if np.any(arr < 0) or np.any(arr > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(arr.sum() - 1.0) > COLUMN_SUM_TOL:
            raise ValueError(f"probabilities sum to {arr.sum()!r}, not 1")
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ColumnDistribution):
            return NotImplemented
        return (
            self.true_label == other.true_label
            and self.labels.names == other.labels.names
            and np.array_equal(self.probs, other.probs)
        )

    def prob(self, predicted_label: str) -> float:
        return float(self.probs[self.labels.index(predicted_label)])


def normalize_column(
    cm: ConfusionMatrix, true_label: str, *, on_zero: str = "error"
) -> ColumnDistribution:
    """Normalize one true-label column into a detection distribution.

    A column with no samples raises ZeroColumnError by default; with
    ``on_zero="emp"`` it falls back to a point mass on the empty label
    (an unobserved configuration treated as a guaranteed miss).
    """
    j = cm.labels.index(true_label)
    col = cm.counts[:, j]
    total = int(col.sum())
    if total == 0:
        if on_zero == "error":
            raise ZeroColumnError(f"true label {true_label!r} has no samples")
        if on_zero != "emp":
            raise ValueError(f"unknown zero-column policy {on_zero!r}")
        probs = np.zeros(len(cm.labels))
        probs[-1] = 1.0
    else:
        probs = col / total
    return ColumnDistribution(true_label, cm.labels, probs)


@dataclass(frozen=True, eq=False)
class DistanceParamCM:
    """One confusion matrix per distance band, sharing a single label set."""

    bands: DistanceBands
    per_band: tuple[ConfusionMatrix, ...]

    def __post_init__(self):
        per_band = tuple(self.per_band)
        if len(per_band) != len(self.bands):
            raise ValueError(
                f"{len(self.bands)} bands but {len(per_band)} matrices"
            )
        for m in per_band[1:]:
            if m.labels != per_band[0].labels:
                raise ValueError("all per-band matrices must share one label set")
        object.__setattr__(self, "per_band", per_band)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DistanceParamCM):
            return NotImplemented
        return self.bands == other.bands and self.per_band == other.per_band

    @property
    def labels(self) -> LabelSet:
        return self.per_band[0].labels

    def matrix_for_distance(self, distance_m: float) -> ConfusionMatrix:
        return self.per_band[band_for_distance(self.bands, distance_m)]


def aggregate(dp: DistanceParamCM) -> ConfusionMatrix:
    """Elementwise sum over bands, collapsing the distance parametrization."""
    total = np.zeros_like(dp.per_band[0].counts)
    for m in dp.per_band:
        total = total + m.counts
    return ConfusionMatrix(dp.labels, total)


def as_single_band(dp: DistanceParamCM) -> DistanceParamCM:
    """Aggregated variant usable wherever a distance-parametrized CM is.

    The single band keeps the original outermost edge; clamping makes it
    cover every distance.
    """
    return DistanceParamCM(DistanceBands((dp.bands.edges[-1],)), (aggregate(dp),))


# ---------------------------------------------------------------------------
# Fixture file format
#
#   labels: ped, obs, emp
#   bands: 10.0, 20.0, ...        <- absent for aggregated matrices
#   band 0
#   31 0 0
#   ...
# ---------------------------------------------------------------------------


def render_fixture(obj: Union[DistanceParamCM, ConfusionMatrix]) -> str:
    """Serialize a (distance-parametrized) confusion matrix as text."""
    if isinstance(obj, DistanceParamCM):
        labels, bands, matrices = obj.labels, obj.bands, obj.per_band
    else:
        labels, bands, matrices = obj.labels, None, (obj,)
    lines = ["labels: " + ", ".join(labels.names)]
    if bands is not None:
        lines.append("bands: " + ", ".join(repr(e) for e in bands.edges))
    for k, m in enumerate(matrices):
        lines.append(f"band {k}")
        for row in m.counts:
            lines.append(" ".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_fixture(text: str) -> Union[DistanceParamCM, ConfusionMatrix]:
    """Parse fixture text; returns a plain matrix when no bands line is present.

    The label kind is inferred: any "+" in a name means proposition-set
    labels.  A proposition fixture over a single class is indistinguishable
    from a class fixture, and parses as "class"; consumers that care match
    on the label names themselves.
    """
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or not lines[0].startswith("labels:"):
        raise FixtureFormatError("line 1 must be 'labels: <names>'")
    names = tuple(s.strip() for s in lines[0][len("labels:"):].split(","))
    kind = "prop" if any("+" in n for n in names) else "class"
    try:
        labels = LabelSet(kind, names)
    except ValueError as e:
        raise FixtureFormatError(str(e)) from None

    pos = 1
    bands = None
    if pos < len(lines) and lines[pos].startswith("bands:"):
        try:
            edges = tuple(float(s) for s in lines[pos][len("bands:"):].split(","))
            bands = DistanceBands(edges)
        except ValueError as e:
            raise FixtureFormatError(f"bad bands line: {e}") from None
        pos += 1

    n = len(labels)
    matrices = []
    while pos < len(lines):
        if lines[pos] != f"band {len(matrices)}":
            raise FixtureFormatError(
                f"expected 'band {len(matrices)}', got {lines[pos]!r}"
            )
        pos += 1
        if pos + n > len(lines):
            raise FixtureFormatError(f"band {len(matrices)}: truncated matrix")
        rows = []
        for i in range(n):
            parts = lines[pos + i].split()
            if len(parts) != n:
                raise FixtureFormatError(
                    f"band {len(matrices)} row {i}: expected {n} entries, got {len(parts)}"
                )
            try:
                rows.append([int(p) for p in parts])
            except ValueError:
                raise FixtureFormatError(
                    f"band {len(matrices)} row {i}: non-integer entry"
                ) from None
        pos += n
        try:
            matrices.append(ConfusionMatrix(labels, np.array(rows)))
        except ValueError as e:
            raise FixtureFormatError(f"band {len(matrices)}: {e}") from None

    if bands is None:
        if len(matrices) != 1:
            raise FixtureFormatError(
                f"aggregated fixture must hold exactly one matrix, got {len(matrices)}"
            )
        return matrices[0]
    if len(matrices) != len(bands):
        raise FixtureFormatError(
            f"{len(bands)} band edges but {len(matrices)} matrices"
        )
    return DistanceParamCM(bands, tuple(matrices))


def load_fixture(path) -> Union[DistanceParamCM, ConfusionMatrix]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_fixture(f.read())


def save_fixture(obj: Union[DistanceParamCM, ConfusionMatrix], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(render_fixture(obj))


def format_table(cm: ConfusionMatrix) -> str:
    """Human-readable predicted-by-true table for terminal output."""
    width = max(
        [len(n) for n in cm.labels.names]
        + [len(str(int(v))) for v in cm.counts.ravel()]
        + [len("pred\\true")]
    )
    def cell(s):
        return str(s).rjust(width)
    header = "  ".join([cell("pred\\true")] + [cell(n) for n in cm.labels.names])
    lines = [header]
    for i, name in enumerate(cm.labels.names):
        lines.append("  ".join([cell(name)] + [cell(int(v)) for v in cm.counts[i]]))
    return "\n".join(lines)

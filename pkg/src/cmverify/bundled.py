"""Loaders for the confusion-matrix fixtures shipped with the package.

The bundled data is the front-camera, full-dataset evaluation of a
pretrained 2D detector: one class-labeled and one proposition-labeled
distance-parametrized matrix, ten 10 m bands out to 100 m.
"""
from __future__ import annotations

from importlib import resources

from .cm import DistanceParamCM, parse_fixture

FIXTURE_NAMES = ("cam_front_class", "cam_front_prop")


def fixture_path(name: str):
    """Filesystem path of a bundled fixture (usable as a cm_path)."""
    if name not in FIXTURE_NAMES:
        raise KeyError(f"unknown fixture {name!r} (have: {', '.join(FIXTURE_NAMES)})")
    return resources.files("cmverify").joinpath(f"fixtures/{name}.cm")


def load_bundled(name: str) -> DistanceParamCM:
    text = fixture_path(name).read_text(encoding="utf-8")
    cm = parse_fixture(text)
    assert isinstance(cm, DistanceParamCM)
    return cm

"""Shared fixtures: libraries and relations built once per session.

Library fixtures are built from the shipped YAML configs so the tests pin the
exact artifacts a user would build. The tiny library keeps unit tests fast;
the full-size ones back the end-to-end checks.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mpswarm.config import load_library_spec
from mpswarm.occupancy import build_relations_for_library
from mpswarm.paths import ArcSpec, LibraryConfig
from mpswarm.topp import ToppParams, build_library

settings.register_profile(
    "suite",
    deadline=None,  # first calls hit numba compilation
    suppress_health_check=[HealthCheck.too_slow],
    max_examples=50,
)
settings.load_profile("suite")

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def config_path(name: str) -> Path:
    return CONFIG_DIR / name


@pytest.fixture(scope="session")
def tiny_library():
    """5 paths (one arc rolled 4x + straight), coarse stages: fast to build."""
    cfg = LibraryConfig(
        arcs=(ArcSpec(2.0), ArcSpec(float("inf"))),
        length_m=2.0,
        rotation_step_deg=90.0,
    )
    return build_library(cfg, ToppParams(stages=200))


@pytest.fixture(scope="session")
def tiny_relations(tiny_library):
    return build_relations_for_library(tiny_library)


def _build_from_config(name: str, stages: int | None = None):
    spec = load_library_spec(config_path(name))
    params = spec.params
    if stages is not None:
        import dataclasses

        params = dataclasses.replace(params, stages=stages)
    return build_library(spec.library, params), spec


@pytest.fixture(scope="session")
def lib37():
    return _build_from_config("lib37.yaml")[0]


@pytest.fixture(scope="session")
def rel37(lib37):
    spec = load_library_spec(config_path("lib37.yaml"))
    return build_relations_for_library(lib37, **spec.occupancy)


@pytest.fixture(scope="session")
def lib73():
    return _build_from_config("lib73.yaml")[0]


@pytest.fixture(scope="session")
def rel73(lib73):
    spec = load_library_spec(config_path("lib73.yaml"))
    return build_relations_for_library(lib73, **spec.occupancy)


@pytest.fixture(scope="session")
def lib109():
    return _build_from_config("lib109.yaml")[0]


@pytest.fixture(scope="session")
def lib361_fast():
    """361-path library at reduced stage count; enough for timing ratios."""
    return _build_from_config("lib361.yaml", stages=250)[0]


@pytest.fixture(scope="session")
def rel361(lib361_fast):
    spec = load_library_spec(config_path("lib361.yaml"))
    return build_relations_for_library(lib361_fast, **spec.occupancy)


@pytest.fixture(scope="session")
def lib181():
    return _build_from_config("lib181.yaml")[0]


@pytest.fixture(scope="session")
def rel181(lib181):
    spec = load_library_spec(config_path("lib181.yaml"))
    return build_relations_for_library(lib181, **spec.occupancy)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)

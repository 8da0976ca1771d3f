"""Equilibria, stable paths and indifference points of the shallow lake model."""

from .model import (
    SCENARIO_I,
    SCENARIO_II,
    CanonicalModel,
    DiffusionOperators,
    ModelParams,
    ShallowLake0D,
    ShallowLake1D,
    make_model,
)

__version__ = "0.1.0"

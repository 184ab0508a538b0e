"""Stackelberg-Nash controllability of linear stochastic heat equations on a binomial lattice."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .errors import (  # noqa: E402
    ConfigError,
    ConvergenceError,
    CouplingError,
    DomainError,
    GeometryError,
    NumericalError,
    ShapeError,
    SizeError,
    SnlabError,
    SolverError,
)
from .game import BACKWARD, FORWARD, Follower, Game, GameData  # noqa: E402
from .grid import SpatialGrid, make_mask, whole_mask  # noqa: E402
from .lattice import AdaptedField, ScalarProcess, TreeGrid, build_tree, space_time_inner  # noqa: E402
from .scenario import Scenario, load_scenario  # noqa: E402

__all__ = [
    "AdaptedField", "BACKWARD", "ConfigError", "ConvergenceError", "CouplingError", "DomainError",
    "FORWARD", "Follower", "Game", "GameData", "GeometryError", "NumericalError", "Scenario",
    "ScalarProcess", "ShapeError", "SizeError", "SnlabError", "SolverError", "SpatialGrid",
    "TreeGrid", "build_tree", "load_scenario", "make_mask", "space_time_inner", "whole_mask",
]

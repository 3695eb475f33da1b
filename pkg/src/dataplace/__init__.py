"""Placement of resources in unit caches: potential game, Glauber dynamics,
LP-dual certificates and a first-price auction, with brute-force oracles."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .instance import (Instance, UnitInstance, embed_uflp, gen_random, load,
                       reduce_to_unit_cache, save, validate)
from .objective import move_delta, player_cost, potential

__all__ = [
    "__version__",
    "Instance",
    "UnitInstance",
    "embed_uflp",
    "gen_random",
    "load",
    "save",
    "validate",
    "reduce_to_unit_cache",
    "move_delta",
    "player_cost",
    "potential",
]

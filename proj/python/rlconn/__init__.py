"""Python access to the rlconn library.

Thin wrappers over the compiled extension; JSON results are decoded to dicts.
"""

import json

from ._core import (
    Mdp,
    RlconnError,
    average_reward,
    f_value,
    g_value,
    occupancy,
    random_ergodic_mdp,
    stationary_points,
    superlevel_components,
)
from . import _core

__all__ = [
    "Mdp",
    "RlconnError",
    "attack",
    "average_reward",
    "f_value",
    "g_value",
    "minimax_gap",
    "occupancy",
    "random_ergodic_mdp",
    "run",
    "stationary_points",
    "superlevel_components",
]


def attack(mdp, target, margin=0.1):
    return json.loads(_core.attack(mdp, list(target), margin))


def minimax_gap(mdp, target, margin=0.1):
    return json.loads(_core.minimax_gap(mdp, list(target), margin))


def run(command, config=None, jobs=1):
    """Runs a CLI subcommand in memory. Returns (exit_code, report dict, files)."""
    overrides = json.dumps(config) if config else ""
    code, files = _core.run_command(command, overrides, jobs)
    return code, json.loads(files["report.json"]), files

"""Rotor-router aggregation, internal DLA and exit-time tools on Z^d."""

from .engine import AggState, aggregate, df_relax, idla, load_snapshot, dump_snapshot
from .exittime import ExitField, brute_force_phi, solve_exit
from .lattice import Region, lattice_ball
from .rotors import CyclicPolicy, ExplicitPolicy, ScriptedPolicy, default_cyclic, make_policy, nesw

__version__ = "0.1.0"

__all__ = [
    "AggState", "aggregate", "df_relax", "idla", "load_snapshot", "dump_snapshot",
    "ExitField", "brute_force_phi", "solve_exit", "Region", "lattice_ball",
    "CyclicPolicy", "ExplicitPolicy", "ScriptedPolicy", "default_cyclic", "make_policy", "nesw",
]

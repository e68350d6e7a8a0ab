"""Embedded sparse LP layer: model builder, presolve, bounded simplex, decomposition."""

from recsettle.lp.decompose import WarmStart
from recsettle.lp.mps import read_mps, write_mps
from recsettle.lp.model import INF, LpModel, ModelArrays, Relation
from recsettle.lp.simplex import SimplexOptions
from recsettle.lp.solve import LpSolution, SolveOptions, SolveStatistics, Status, solve

__all__ = [
    "INF", "LpModel", "LpSolution", "ModelArrays", "Relation", "SimplexOptions", "SolveOptions",
    "SolveStatistics", "Status", "WarmStart", "read_mps", "solve", "write_mps",
]

"""Learned machine-permutation quality for job-shop tabu search."""
from .core import Infeasible, Instance, OpId, Solution, evaluate, makespan

__all__ = ["Infeasible", "Instance", "OpId", "Solution", "evaluate", "makespan"]

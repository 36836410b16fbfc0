"""
Contract Solver CLI Commands

All command modules for the pa CLI tool.
Each module provides a register() hook and cmd_* handlers returning dicts.
"""

from . import solve, simulate, firstbest

__all__ = ['solve', 'simulate', 'firstbest']

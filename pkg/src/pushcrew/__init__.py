"""pushcrew: hierarchical multi-robot collaborative pushing in 2D.

Simulator, RRT planner, reward tables, minimal neural stack, PPO/MAPPO
trainers, task definitions, and an experiment harness.
"""

__version__ = "0.1.0"

from . import errors  # noqa: F401

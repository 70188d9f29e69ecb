"""Shared exception types for the pushcrew package."""


class PushCrewError(Exception):
    """Base class for all errors raised by this package."""


# geometry
class DegenerateInput(PushCrewError):
    """Input too degenerate for the requested geometric construction."""


class InteriorQuery(PushCrewError):
    """Query point lies strictly inside a polygon where only exterior queries are valid."""


# simulator
class BadCommand(PushCrewError):
    """Velocity command is non-finite or outside the action bounds."""


class SingleAgent(PushCrewError):
    """Operation requires at least two robots."""


# planner
class NoPath(PushCrewError):
    """Planner exhausted its iteration budget without reaching the goal."""


class StartOrGoalBlocked(PushCrewError):
    """Start or goal lies inside an inflated obstacle or outside the map."""


# rewards
class DegenerateTarget(PushCrewError):
    """Subgoal coincides with the object center; the target direction is undefined."""


# neural
class ShapeMismatch(PushCrewError):
    """Array shapes do not chain through the network."""


class NonFiniteGradient(PushCrewError):
    """A gradient contained NaN or infinity; the update was aborted."""


class VersionMismatch(PushCrewError):
    """Checkpoint was written with an incompatible format version."""


class CorruptFile(PushCrewError):
    """Checkpoint failed its checksum or is truncated."""


# trainer
class LengthMismatch(PushCrewError):
    """Reward/value/done sequences have inconsistent lengths."""


class NonFiniteLoss(PushCrewError):
    """A training loss became NaN or infinite."""


# tasks / harness
class SpawnCollision(PushCrewError):
    """Could not find a collision-free spawn configuration."""


class MissingCheckpoint(PushCrewError):
    """A required policy checkpoint file does not exist."""

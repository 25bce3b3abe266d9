"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    pass


class OutOfCorridor(ValueError):
    """A cartesian point lies too far from the reference line to project."""


class PlanningError(RuntimeError):
    pass


class PlannerStarvation(RuntimeError):
    """The world was stepped with an empty ego path segment."""


class EpisodeDone(RuntimeError):
    pass


class CheckpointFormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass

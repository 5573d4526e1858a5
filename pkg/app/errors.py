"""Exception types raised across the simulator, agent and experiment layers."""


class ContractError(ValueError):
    """A caller broke a documented precondition (shapes, episode state, inputs)."""


class InfeasibleGeometryError(ValueError):
    """Antennas cannot be placed on a waveguide with the required spacing."""


class UndefinedDistanceError(ValueError):
    """A pairwise distance was requested for fewer than two antennas."""


class SingularChannelError(ArithmeticError):
    """A terminal coincides with an antenna, so the 1/d channel is undefined."""


class ConfigError(ValueError):
    """The experiment configuration could not be parsed or validated."""


class CheckpointError(ValueError):
    """Base class for checkpoint read failures."""


class CheckpointIntegrityError(CheckpointError):
    """The checkpoint payload does not match its recorded checksum."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint was written by an unsupported format version."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite parameter."""


class ComparisonError(ValueError):
    """Run reports cannot be compared with each other."""

"""Exception hierarchy.

Errors split into two families that the CLI maps onto exit codes:
configuration problems (exit 2) and protocol aborts (exit 3).
"""


class PrivPolyError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(PrivPolyError):
    """Malformed scenario, topology or parameter set."""


class ParameterError(ConfigError):
    pass


class ProtocolAbort(PrivPolyError):
    """A protocol run cannot continue."""


# modmath / paillier
class NotInvertible(PrivPolyError, ArithmeticError):
    pass


class MessageTooLarge(PrivPolyError, ValueError):
    pass


class WrongKey(PrivPolyError):
    pass


# codec
class EncodingOverflow(ProtocolAbort):
    pass


class ScaleError(PrivPolyError):
    pass


# poly
class InvalidSupport(ConfigError):
    pass


class MissingAgent(PrivPolyError, KeyError):
    pass


# shares
class GroupTooSmall(ConfigError):
    pass


class MissingContribution(ProtocolAbort):
    pass


# protocol
class InsufficientNeighbors(ProtocolAbort):
    pass


class RoleConflict(ProtocolAbort):
    pass


class NewDistinguishedRequired(ProtocolAbort):
    """The distinguished neighbor dropped; a new one must be selected."""

    def __init__(self, dropped):
        super().__init__(f"distinguished neighbor {dropped} dropped out")
        self.dropped = dropped


# netsim
class TopologyViolation(ProtocolAbort):
    pass


class DeliveryToDropped(ProtocolAbort):
    pass


# privacy
class StructureViolation(ConfigError):
    pass


class OracleInconclusive(PrivPolyError):
    pass


# apps
class GradientGuard(ProtocolAbort):
    pass

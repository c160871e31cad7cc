"""Exception hierarchy shared by every dualdrm module."""


class DualDRMError(Exception):
    """Base class for all library errors."""


class InputError(DualDRMError, ValueError):
    """Malformed or out-of-range input (bad ids, joint-limit violations...)."""


class JointLimitError(InputError):
    pass


class ModelError(InputError):
    """Robot model failed validation."""


class ConfigurationError(DualDRMError):
    """Roadmap and query inputs are not compatible (grid/padding mismatch)."""


class GridMismatchError(ConfigurationError):
    pass


class ContractViolation(DualDRMError):
    """A caller broke a structural invariant, e.g. a node pair whose torso indices differ."""


class BuildError(DualDRMError):
    pass


class NodeCapExceeded(BuildError):
    pass


class EmptyRoadmapError(BuildError):
    pass


class PairBudgetExceeded(BuildError):
    pass


# -- persistence -------------------------------------------------------------

class FormatError(DualDRMError):
    """File could not be parsed."""


class MagicError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


# -- planning failures -------------------------------------------------------

class PlanningFailure(DualDRMError):
    """Base for the typed failure kinds a query can end with.

    ``kind`` is the stable identifier written to CLI output and bench CSVs.
    """

    kind = "PlanningFailure"

    def __init__(self, message="", stats=None):
        super().__init__(message or self.kind)
        self.stats = stats


class StartInCollision(PlanningFailure):
    kind = "StartInCollision"


class TargetInCollision(PlanningFailure):
    kind = "TargetInCollision"


class NoConnectableNode(PlanningFailure):
    kind = "NoConnectableNode"


class NoPath(PlanningFailure):
    kind = "NoPath"


class LimitExceeded(PlanningFailure):
    """Search expansion budget or wall-clock limit hit."""

    kind = "LimitExceeded"


class BudgetExceeded(PlanningFailure):
    """Planner iteration cap or time budget hit."""

    kind = "BudgetExceeded"

"""Exception hierarchy shared across the package."""


class CoopSimError(Exception):
    """Base class for all package-specific errors."""


class ScenarioParseError(CoopSimError):
    """Scenario file could not be read or has the wrong structure."""


class ScenarioValidationError(CoopSimError):
    """Scenario content violates an invariant.

    `rule` names the violated invariant, e.g. "lane.stop_line_pos".
    """

    def __init__(self, rule: str, message: str):
        super().__init__(f"{rule}: {message}")
        self.rule = rule


class UnknownLaneError(CoopSimError):
    pass


class UnknownGroupError(CoopSimError):
    pass


class LaneChangeRejected(CoopSimError):
    """Lane change cannot be applied; the maneuver stays pending."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class MatrixError(CoopSimError):
    """Payoff matrix is malformed for the requested operation."""


class StalenessViolation(CoopSimError):
    """An evaluation was produced after the partner's was already delivered."""

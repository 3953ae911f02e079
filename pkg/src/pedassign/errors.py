"""Exception hierarchy shared by all modules.

The three top-level categories map onto the CLI exit codes:
config problems (2), scenario/route construction problems (3) and
run-time failures (4).
"""


class PedassignError(Exception):
    """Base class for all package errors."""


class ConfigError(PedassignError):
    """Invalid or missing configuration value."""


class ScenarioError(PedassignError):
    """Invalid walking geometry or route construction failure."""


class RouteConstructionError(ScenarioError):
    """Intermediate-destination construction failed for a gateway."""

    def __init__(self, message: str, gateway_id: int | None = None):
        super().__init__(message)
        self.gateway_id = gateway_id


class RunError(PedassignError):
    """A simulation or assignment run failed."""

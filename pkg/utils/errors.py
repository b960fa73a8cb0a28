# errors.py
# Exception hierarchy shared by the library modules and the CLI front end.


class MpathError(Exception):
    """Base class for every error raised by the allocator."""


# --- Scenario ingestion ---

class ScenarioError(MpathError, ValueError):
    """A scenario document or derived scenario violates the schema or an invariant."""


class SchemaError(ScenarioError):
    pass


class DuplicateIdError(ScenarioError):
    pass


class UnknownNodeError(ScenarioError):
    pass


class MissingDestinationError(ScenarioError):
    pass


class DisjointPathError(ScenarioError):
    pass


class InvalidFlowError(ScenarioError):
    pass


class TopologyShapeError(ScenarioError):
    """Raised when an operation needs a specific topology shape (e.g. the toy topology)."""


# --- Caller contract ---

class ContractViolation(MpathError, ValueError):
    pass


class HalfDuplexViolation(ContractViolation):
    pass


class LinkNotOnPathError(ContractViolation):
    pass


class EmptyFlowSetError(ContractViolation):
    pass


class DimensionMismatchError(ContractViolation):
    pass


# --- Computation ---

class IntractableEnumerationError(MpathError, RuntimeError):
    """Interferer set too large to enumerate; never silently truncated."""


class UsageError(MpathError):
    """Bad command-line usage (maps to exit code 1)."""

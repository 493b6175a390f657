"""Exception hierarchy shared by the pipeline stages.

Library code raises these; only the command-line layer turns them into exit
codes (see ``exit_code_for``).
"""

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_MISSING = 3
EXIT_INVARIANT = 4


class BikeShareError(Exception):
    """Base class for every error raised by the toolkit."""


class ValidationError(BikeShareError, ValueError):
    """Input data or a call argument violates a precondition."""


class SchemaError(ValidationError):
    def __init__(self, column, source=None):
        self.column = column
        where = f" in {source}" if source else ""
        super().__init__(f"missing required column '{column}'{where}")


class OrderingError(ValidationError):
    """Snapshots were expected in ascending timestamp order."""


class LookupFailure(ValidationError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DegenerateSplitError(ValidationError):
    """All rows share the same instant, so no chronological boundary exists."""


class AlignmentError(ValidationError):
    def __init__(self, missing):
        self.missing = list(missing)
        cells = ", ".join(f"{model}@{delta}" for model, delta in self.missing)
        super().__init__(f"reports do not share a horizon grid; missing cells: {cells}")


class ConvergenceError(BikeShareError):
    def __init__(self, component, iterations):
        self.component = component
        self.iterations = iterations
        super().__init__(
            f"NIPALS did not converge for component {component} within {iterations} iterations"
        )


class MissingArtifactError(BikeShareError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"missing prerequisite artifact: {path}")


class InvariantError(BikeShareError):
    """An internal consistency check failed."""


def exit_code_for(error):
    if isinstance(error, MissingArtifactError):
        return EXIT_MISSING
    if isinstance(error, InvariantError):
        return EXIT_INVARIANT
    if isinstance(error, (ValidationError, OSError)):
        return EXIT_INPUT
    return 1

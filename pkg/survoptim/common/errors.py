"""Exception types shared by every survoptim module."""


class SurvoptimError(ValueError):
    """Base class for all errors raised by survoptim."""

    def __init__(self, message, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_record(self):
        """
        Build the machine-readable error record written by the CLI.

        Returns:
            dict: error type, message and any details attached to the error.
        """
        record = {"error": type(self).__name__, "message": self.message}
        if self.details:
            record["details"] = self.details
        return record


class SchemaError(SurvoptimError):
    """A required column is missing or a schema entry is malformed."""


class ValidationError(SurvoptimError):
    """Input values violate a data contract (event not in {0,1}, time <= 0, ...)."""

    def __init__(self, message, row=None, **details):
        if row is not None:
            details["row"] = int(row)
        super().__init__(message, **details)
        self.row = row


class FitError(SurvoptimError):
    """A model or preprocessor cannot be fitted on the supplied data."""


class ConvergenceError(SurvoptimError):
    """An optimisation did not converge and the result cannot be trusted."""


class OptimizerError(SurvoptimError):
    """The objective or gradient became non-finite during a search."""

    def __init__(self, message, last_point=None, **details):
        super().__init__(message, **details)
        self.last_point = last_point


class CalibrationError(SurvoptimError):
    """The simulator could not reach the requested censoring fraction."""


class ConfigError(SurvoptimError):
    """The pipeline configuration is invalid; ``problems`` lists every violation."""

    def __init__(self, problems):
        problems = list(problems)
        super().__init__("Invalid configuration: " + "; ".join(problems), problems=problems)
        self.problems = problems

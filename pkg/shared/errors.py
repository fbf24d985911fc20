from typing import List, Optional


class TrialMatchError(Exception):
    """Base class for every error the pipeline raises on purpose."""

    exit_code = 1


# --- Input side (exit 2) ---

class InputError(TrialMatchError):
    exit_code = 2


class ConfigError(InputError):
    pass


class ArtifactError(InputError):
    """A stage artifact is missing, unreadable or inconsistent."""


class CompositionError(InputError):
    def __init__(self, trial_id: str, violations: List[str]):
        self.trial_id = trial_id
        self.violations = violations
        super().__init__(f"Trial {trial_id} failed validation: " + "; ".join(violations))


class MissingAnswerError(InputError):
    def __init__(self, question_id: str):
        self.question_id = question_id
        super().__init__(f"No answer for question {question_id}")


class CapacityError(InputError):
    def __init__(self, unknowns: int, limit: int):
        self.unknowns = unknowns
        self.limit = limit
        super().__init__(f"{unknowns} unknown answers exceed the marginalization limit of {limit}")


class ScoringError(InputError):
    pass


# --- Backend output that cannot be used ---

class FormatError(TrialMatchError):
    """Backend returned something we cannot interpret. The raw payload is kept."""

    exit_code = 3

    def __init__(self, message: str, raw: Optional[str] = None):
        self.raw = raw
        super().__init__(message)


class ParseError(FormatError):
    pass


class AnswerValidationError(FormatError):
    pass


# --- Transport (exit 3) ---

class BackendError(TrialMatchError):
    exit_code = 3

"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 1)."""


class NumericalAbortError(RuntimeError):
    """Training produced a non-finite loss (CLI exit code 2)."""

    def __init__(self, step: int, seed: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step} (seed {seed})")
        self.step = step
        self.seed = seed
        self.value = value


class BudgetExceededError(RuntimeError):
    """Candidate count above the exhaustive-search budget (CLI exit code 3)."""


class CorruptCheckpointError(RuntimeError):
    """Checkpoint file truncated or otherwise malformed."""


class CheckpointVersionError(RuntimeError):
    """Checkpoint format version does not match the reader."""

    def __init__(self, found: int, expected: int):
        super().__init__(f"checkpoint format version {found}, reader supports {expected}")
        self.found = found
        self.expected = expected

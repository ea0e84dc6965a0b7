"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An argument or config value violates a documented precondition."""


class DataIngestError(RuntimeError):
    """A dataset could not be loaded or generated."""


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss; carries a diagnostic snapshot."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

"""Exception hierarchy shared across the pipeline."""


class TabDistillError(Exception):
    """Base class for all pipeline errors."""


class SchemaError(TabDistillError):
    """Metadata or column layout violates the declared schema."""


class ParseError(TabDistillError):
    """Malformed input file content (ragged rows, bad tokens)."""


class EmptyInputError(TabDistillError):
    """An input that must contain data rows has none."""


class InsufficientDataError(TabDistillError):
    """Too few rows for the requested split, sample, or fit."""


class GatewayError(TabDistillError):
    """Completion transport failed after retries, or a scripted client refused."""


class ScriptError(TabDistillError):
    """A scripted policy could not be applied to a prompt (template drift)."""


class ConfigError(TabDistillError):
    """Invalid or incomplete experiment configuration."""


class StageError(TabDistillError):
    """A distillation stage aborted; message names the stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage

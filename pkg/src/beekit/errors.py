"""Exception hierarchy with machine-parseable error classes.

Every exception carries an ``error_class`` slug that the CLI prints on a
single line, so callers can branch on failures without parsing prose.
"""


class BeekitError(Exception):
    error_class = "error"

    def one_line(self) -> str:
        msg = " ".join(str(self).split())
        return f"{self.error_class}: {msg}"


class DimensionMismatch(BeekitError, ValueError):
    error_class = "dimension-mismatch"


class DataError(BeekitError, ValueError):
    """Invalid or inconsistent data contents (bad indices, empty result, ...)."""

    error_class = "data-error"


class SamplerError(BeekitError, ValueError):
    error_class = "sampler-error"


class TrainingError(BeekitError, RuntimeError):
    """Non-finite loss or gradient; the offending step is aborted."""

    error_class = "training-error"


class IngestError(BeekitError, ValueError):
    error_class = "ingest-error"


class CorruptFileError(BeekitError, ValueError):
    error_class = "corrupt-file"


class ConfigError(BeekitError, ValueError):
    error_class = "config-error"

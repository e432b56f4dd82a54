"""Error taxonomy, mirrored from the consumer side of the pipeline.

ConfigError is a bad argument or file the caller controls, DataError is
bad or missing input data. Nothing here is recoverable in-process; the
caller fixes the input and reruns.
"""


class ExtractorError(Exception):
    pass


class ConfigError(ExtractorError):
    pass


class DataError(ExtractorError):
    pass

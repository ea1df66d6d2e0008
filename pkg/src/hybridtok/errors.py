"""Exception hierarchy.

Every error carries a short machine-parsable ``code`` and an ``exit_code``
used by the command-line front end.
"""


class HybridTokError(Exception):
    code = "E_GENERIC"
    exit_code = 1


class ConfigError(HybridTokError):
    code = "E_CONFIG"
    exit_code = 2


class ConfigSyntaxError(ConfigError):
    code = "E_CONFIG_SYNTAX"


class ConfigUnknownKeyError(ConfigError):
    code = "E_CONFIG_UNKNOWN_KEY"


class ConfigValidationError(ConfigError):
    code = "E_CONFIG_INVALID"


class CheckpointMismatchError(ConfigError):
    code = "E_CHECKPOINT_MISMATCH"


class DataError(HybridTokError):
    code = "E_DATA"
    exit_code = 3


class IngestError(DataError):
    code = "E_INGEST"


class TeacherDataError(DataError):
    code = "E_TEACHER_DATA"


class ProbeDataError(DataError):
    code = "E_PROBE_DATA"


class ShapeError(DataError):
    code = "E_SHAPE"


class NumericError(HybridTokError):
    code = "E_NUMERIC"
    exit_code = 4


class EmptyStatsError(NumericError):
    code = "E_EMPTY_STATS"


class StateError(HybridTokError):
    code = "E_STATE"

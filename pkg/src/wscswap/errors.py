class WSCError(Exception):
    exit_code = 1


class ConfigError(WSCError, ValueError):
    exit_code = 2


class ShapeError(WSCError, ValueError):
    exit_code = 3


class CheckpointError(ShapeError):
    pass


class TrainingAborted(WSCError, RuntimeError):
    exit_code = 4

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report

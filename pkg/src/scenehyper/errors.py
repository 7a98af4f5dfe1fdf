"""Exception hierarchy shared by every module of the package."""


class SceneHyperError(Exception):
    """Base class for all package errors."""


class BoundsError(SceneHyperError, IndexError):
    pass


class DegenerateInputError(SceneHyperError, ValueError):
    pass


class ConfigurationError(SceneHyperError, ValueError):
    pass


class ShapeError(SceneHyperError, ValueError):
    pass


class GenerationError(SceneHyperError, RuntimeError):
    pass


class ReportError(SceneHyperError, ValueError):
    pass


class ParseError(SceneHyperError, ValueError):
    """Malformed file content. ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class CheckpointError(SceneHyperError, ValueError):
    pass

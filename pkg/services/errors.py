class FmoError(Exception):
    """Base class for every failure raised by the toolkit."""


class ImageError(FmoError, ValueError):
    pass


class FormationError(FmoError, ValueError):
    pass


class EnergyError(FmoError, ValueError):
    pass


class SceneError(FmoError, ValueError):
    pass


class DatasetError(FmoError):
    """Malformed or incomplete dataset directory; the message names the path."""

    def __init__(self, message: str, path=None):
        self.path = str(path) if path is not None else None
        super().__init__(f"{message}: {self.path}" if self.path else message)


class MetricError(FmoError, ValueError):
    pass


class ConfigError(FmoError, ValueError):
    pass

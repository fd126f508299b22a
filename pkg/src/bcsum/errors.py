class BcsError(Exception):
    """Base class for pipeline errors."""


class ConfigError(BcsError):
    """Bad configuration: unknown arch, invalid ratios, unreadable mapping file..."""


class ValidationError(BcsError):
    """Input data violates a structural invariant."""


class ParseError(ValidationError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")
        self.line = line
        self.path = path


class AmbiguityError(ValidationError):
    pass


class EmptyDatasetError(ValidationError):
    pass

class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class ReservoirInitError(RuntimeError):
    pass


class InsufficientExperience(RuntimeError):
    pass


class InvalidAction(ValueError):
    pass


class InvalidConfig(ValueError):
    pass


class UnknownGrid(KeyError):
    pass


class ScheduleMismatch(ValueError):
    pass


class InvalidFileExtension(Exception):
    pass


class InvalidFilePathOrDir(Exception):
    pass

"""Exception hierarchy shared by all optforge modules."""


class OptForgeError(Exception):
    pass


class IncompleteExpression(OptForgeError):
    pass


class DimensionMismatch(OptForgeError):
    pass


class InvalidHorizon(OptForgeError):
    pass


class UnknownOperator(OptForgeError):
    pass


class ParseError(OptForgeError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class NoHoles(OptForgeError):
    pass


class UnrollBudgetExceeded(OptForgeError):
    pass


class ExplosionGuard(OptForgeError):
    pass


class BudgetExhausted(OptForgeError):
    pass


class ConfigError(OptForgeError):
    pass


class DataError(OptForgeError):
    pass


class DataMissing(DataError):
    pass


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class CountMismatch(DataError):
    pass

"""Exception hierarchy shared by every module of the package."""


class SkelPoisonError(Exception):
    """Base class for all errors raised by skelpoison."""


class DataError(SkelPoisonError):
    """Input data is malformed or inconsistent (CLI exit code 1)."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.message = message


class UnsupportedJointCountError(ParseError):
    pass


class NotOnChainError(SkelPoisonError):
    pass


class RootHasNoBoneError(SkelPoisonError):
    pass


class NonUnitAxisError(SkelPoisonError, ValueError):
    pass


class NonUnitQuaternionError(SkelPoisonError, ValueError):
    pass


class ChainMismatchError(SkelPoisonError, ValueError):
    pass


class NonFiniteTargetError(SkelPoisonError, ValueError):
    pass


class SequenceTooShortError(DataError):
    pass


class DegenerateBoneError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class TargetClassEmptyError(DataError):
    pass


class LabelOutOfRangeError(DataError):
    pass


class EmptyAnglesError(DataError):
    pass


class BinMismatchError(SkelPoisonError, ValueError):
    pass

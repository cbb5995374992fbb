"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 2 for configuration
problems, 3 for bad input data, 4 for broken invariants.
"""


class TreeAnnError(Exception):
    exit_code = 1


class ConfigError(TreeAnnError):
    exit_code = 2


class DataError(TreeAnnError):
    exit_code = 3


class InvariantError(TreeAnnError):
    exit_code = 4


class MagicMismatch(DataError):
    pass


class VersionUnsupported(DataError):
    pass


class TruncatedFile(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class IoFailure(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class DuplicatePair(ParseError):
    pass


class UnknownId(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class KTooLarge(DataError):
    pass


class DocNotIndexed(DataError):
    pass


class NoTrainingData(DataError):
    pass


class EmptyQuerySet(DataError):
    pass


class ShapeMismatch(InvariantError):
    pass


class StructureInvalid(InvariantError):
    pass

"""Exception hierarchy shared across the package."""


class DSEError(Exception):
    """Base class for every error raised by hlsdse."""


# design space

class SpaceError(DSEError, ValueError):
    pass


class MissingPlaceholder(SpaceError):
    pass


class UnknownGuardSymbol(SpaceError):
    pass


class EmptyDomain(SpaceError):
    pass


class UnsupportedKindForBackend(SpaceError):
    pass


class DuplicateParam(SpaceError):
    pass


class DefaultViolatesGuard(SpaceError):
    pass


class UnknownParam(SpaceError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InvalidPoint(SpaceError):
    pass


# evaluator

class UnknownLoopAttachment(DSEError, ValueError):
    pass


class KernelModelError(DSEError, ValueError):
    pass


class AdapterSpawnFailure(DSEError):
    pass


# agents

class NoCandidates(DSEError):
    pass


class FrozenParam(DSEError):
    pass


class TransportError(DSEError):
    pass


class SchemaViolation(DSEError, ValueError):
    pass


# history / explorer

class MultiParamDiff(DSEError, ValueError):
    pass


class DuplicatePoint(DSEError):
    def __init__(self, message, existing_id):
        super().__init__(message)
        self.existing_id = existing_id


class PrunedParent(DSEError):
    pass


class NoFeasible(DSEError):
    pass


class CorruptLog(DSEError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class RootInfeasible(DSEError):
    pass


class BackendFailure(DSEError):
    pass


class ConfigError(DSEError, ValueError):
    pass

"""Exception hierarchy shared by every lambdaflow module."""


class LambdaflowError(Exception):
    """Base class for all errors raised by this package."""


# -- pipeline construction -------------------------------------------------

class SpecError(LambdaflowError, ValueError):
    pass


class InvalidUri(SpecError):
    pass


class InvalidTimeout(SpecError):
    pass


class InvalidConfig(SpecError):
    pass


class UnknownKind(SpecError):
    pass


class MissingParam(SpecError):
    def __init__(self, name):
        super().__init__(f"missing required parameter {name!r}")
        self.name = name


class UnknownParam(SpecError):
    def __init__(self, name):
        super().__init__(f"unknown parameter {name!r}")
        self.name = name


class InvalidParam(SpecError):
    pass


class EmptyPipeline(SpecError):
    pass


class NoInputFormat(SpecError):
    pass


class SchemaMismatch(SpecError):
    pass


class Malformed(SpecError):
    pass


# -- data primitives ---------------------------------------------------------

class FormatError(LambdaflowError, ValueError):
    pass


class UnknownFormat(LambdaflowError, KeyError):
    pass


class MissingChunk(LambdaflowError):
    def __init__(self, ordinal):
        super().__init__(f"chunk with ordinal {ordinal} is missing")
        self.ordinal = ordinal


class NoChunks(LambdaflowError):
    pass


class EmptyMapTable(LambdaflowError):
    pass


class EmptySample(LambdaflowError):
    pass


class UnknownApplication(LambdaflowError, KeyError):
    pass


class KernelError(LambdaflowError):
    pass


# -- storage -------------------------------------------------------------------

class KeyExists(LambdaflowError):
    pass


class NotFound(LambdaflowError, KeyError):
    pass


class DuplicateEvent(LambdaflowError):
    pass


# -- orchestration ---------------------------------------------------------------

class InputMissing(LambdaflowError):
    pass


class BadState(LambdaflowError):
    pass


class UnknownJob(LambdaflowError, KeyError):
    pass


# -- provisioning ------------------------------------------------------------------

class Underdetermined(LambdaflowError):
    pass


class Infeasible(LambdaflowError):
    pass

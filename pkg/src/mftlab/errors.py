"""Exception types shared across the package."""


class MftError(Exception):
    """Base class for all package errors."""


class UnknownToken(MftError):
    def __init__(self, token: str, offset: int):
        super().__init__(f"unknown token {token!r} at byte offset {offset}")
        self.token = token
        self.offset = offset


class IdOutOfRange(MftError):
    pass


class ShapeMismatch(MftError):
    pass


class NotScalar(MftError):
    pass


class AllWeightsZero(MftError):
    pass


class SequenceTooLong(MftError):
    pass


class InvalidMixture(MftError):
    pass


class GenerationExhausted(MftError):
    pass


class TooManyDistractors(MftError):
    pass


class NonFiniteLoss(MftError):
    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


class BadMagic(MftError):
    pass


class ConfigMismatch(MftError):
    pass


class VocabMismatch(MftError):
    pass


class SchemaMismatch(MftError):
    pass


class MissingBaseline(MftError):
    pass


class NotNumeric(MftError):
    pass


class BadPositions(MftError):
    pass


class TemplateError(MftError):
    pass

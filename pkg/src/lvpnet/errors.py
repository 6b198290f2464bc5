"""Exception hierarchy shared by the codec, trainer and CLI."""


class LvpError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(LvpError):
    pass


class DegenerateInputError(LvpError):
    pass


class UsageError(LvpError):
    pass


class TrainingError(LvpError):
    pass


class CodecError(LvpError):
    pass


class CorruptStreamError(CodecError):
    pass


class MagicMismatchError(CorruptStreamError):
    pass


class ModelHashMismatchError(CodecError):
    pass


class ModelCorruptError(LvpError):
    pass


class RoundTripError(CodecError):
    """Decoded image differs from the original."""

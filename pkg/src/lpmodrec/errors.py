"""Exception hierarchy shared by every stage of the pipeline."""


class ModrecError(Exception):
    """Base class for all errors raised by lpmodrec."""


class EmptyInstance(ModrecError):
    pass


class NonFiniteSample(ModrecError):
    pass


class FormatError(ModrecError):
    pass


class TruncatedFile(ModrecError):
    pass


class UnsupportedModulation(ModrecError):
    pass


class ConfigError(ModrecError):
    pass


class DegenerateSignal(ModrecError):
    pass


class TooFewSamples(ModrecError):
    pass


class SeriesTooShort(ModrecError):
    pass


class DegenerateData(ModrecError):
    pass


class DimensionMismatch(ModrecError):
    pass


class DegenerateLabels(ModrecError):
    pass


class TagMismatch(ModrecError):
    pass


class TooFewExamples(ModrecError):
    pass

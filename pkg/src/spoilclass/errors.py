"""Exception hierarchy.

``ConfigError`` maps to CLI exit code 2, ``DataError`` to 3 and
``TrainingError`` to 4.
"""


class SpoilClassError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SpoilClassError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DataError(SpoilClassError):
    pass


class TrainingError(SpoilClassError):
    pass


# bmac
class MissingAttribute(DataError):
    pass


class InvalidCategory(DataError):
    pass


# dataset
class DuplicateId(DataError):
    pass


class UnknownLabel(DataError):
    def __init__(self, target: str, value: str):
        self.target = target
        self.value = value
        super().__init__(f"label {value!r} is not in the vocabulary of {target!r}")


class MissingFile(DataError):
    pass


class DecodeError(DataError):
    pass


class InsufficientClassSamples(DataError):
    def __init__(self, label: str, count: int, needed: int):
        self.label = label
        super().__init__(f"class {label!r} has {count} samples, needs at least {needed}")


# backbones
class UnknownArchitecture(ConfigError):
    def __init__(self, name: str):
        super().__init__("backbone.name", f"unknown architecture {name!r}")


class WeightsUnavailable(DataError):
    pass


class InvalidClassCount(ConfigError):
    def __init__(self, n: int):
        super().__init__("n_classes", f"need at least 2 classes, got {n}")


class ShapeMismatch(DataError):
    pass


# training
class DivergenceDetected(TrainingError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")


class EmptyFold(TrainingError):
    pass


class DegenerateFeatures(TrainingError):
    pass


class InsufficientSamples(TrainingError):
    pass


class DimensionMismatch(DataError):
    pass


class StaleExtractor(DataError):
    pass


# bag of features
class TooFewDescriptors(TrainingError):
    pass


class SingleClassInput(TrainingError):
    pass


# evaluation
class LengthMismatch(DataError):
    pass


class EmptyMatrix(DataError):
    pass


class AbsentClass(DataError):
    def __init__(self, label: str):
        self.label = label
        super().__init__(f"class {label!r} has no true samples")


class UndefinedPrecision(DataError):
    pass


class TooFewReports(DataError):
    pass


# experiment
class MixedTargets(DataError):
    pass


class TooFewRuns(DataError):
    pass


class NoBundles(DataError):
    pass

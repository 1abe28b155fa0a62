"""
    Exception hierarchy.

    Every failure the toolkit reports is a subclass of `WeaveLabError`, so
    callers (and the command line) can tell a domain error apart from a
    programming error.
"""


class WeaveLabError(Exception):
    """ Base class for all errors raised by weave-lab. """


class ConfigError(WeaveLabError):
    """ Unknown or unreadable run configuration. Reported as a usage error. """


# Raster
class RasterError(WeaveLabError):
    pass


class UnreadableFile(RasterError):
    pass


class UnsupportedFormat(RasterError):
    pass


class ZeroDimension(RasterError):
    pass


class InvalidImage(RasterError):
    pass


class ResultTooSmall(RasterError):
    pass


class OutOfBounds(RasterError):
    pass


# Preprocessing
class PreprocessError(WeaveLabError):
    pass


class BadKernel(PreprocessError):
    pass


class ScanFailed(PreprocessError):
    pass


# Spectral estimation
class SpectralError(WeaveLabError):
    pass


class NoPeak(SpectralError):
    pass


class EmptyAfterFilter(SpectralError):
    pass


class NonPositiveReference(SpectralError):
    pass


# Synthetic weaves
class SimulationError(WeaveLabError):
    pass


class BadParams(SimulationError):
    pass


class TooFewThreads(SimulationError):
    pass


# Corpora
class DatasetError(WeaveLabError):
    pass


class TooFewCanvases(DatasetError):
    pass


# Regression network
class ModelError(WeaveLabError):
    pass


class ShapeMismatch(ModelError):
    pass


class NonFiniteActivation(ModelError):
    pass


class NonPositiveLabel(ModelError):
    pass


class DivergedNaN(ModelError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super(DivergedNaN, self).__init__(
            message or 'Non-finite loss at epoch %d' % epoch)


class WeightFileError(ModelError):
    pass


class BadMagic(WeightFileError):
    pass


class ChecksumMismatch(WeightFileError):
    pass


class ConfigMismatch(WeightFileError):
    pass


# Canvas analysis
class AnalysisError(WeaveLabError):
    pass


class PlateTooSmall(AnalysisError):
    pass


class BadOverlap(AnalysisError):
    pass


class NoAgreementPool(AnalysisError):
    pass


class IncompatibleOrientations(AnalysisError):
    pass


class IoError(AnalysisError):
    pass


# Command line
class InvalidOptions(WeaveLabError):
    """ Option values rejected by a subcommand's form. """

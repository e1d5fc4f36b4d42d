"""Exception hierarchy shared by every stage of the pipeline."""


class StyleTransferError(Exception):
    pass


class ShapeError(StyleTransferError, ValueError):
    pass


class InputTooSmallError(ShapeError):
    pass


class PatchTooLargeError(ShapeError):
    pass


class CompositionError(StyleTransferError, ValueError):
    pass


class ParameterError(StyleTransferError, ValueError):
    pass


class ConfigError(StyleTransferError):
    pass


class CheckpointError(StyleTransferError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    pass


class DataError(StyleTransferError):
    pass


class TrainingDivergedError(StyleTransferError):
    pass

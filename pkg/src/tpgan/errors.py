"""Exception hierarchy.

Each family maps onto a distinct CLI exit code so scripted callers can tell a
bad config from missing data from a run that blew up.
"""


class TPGANError(Exception):
    exit_code = 1


class ValidationError(TPGANError):
    exit_code = 2


class DataError(TPGANError):
    exit_code = 3


class TrainingError(TPGANError):
    exit_code = 4


# data
class InsufficientData(DataError):
    pass


class BatchTooLarge(DataError):
    pass


class ImbalancedAssembly(DataError):
    pass


class CorruptCheckpoint(DataError):
    pass


# networks / losses
class ShapeMismatch(ValidationError):
    pass


class DegenerateLabelSpace(ValidationError):
    pass


class NonFiniteGradient(TrainingError):
    pass


class NonFiniteLoss(TrainingError):
    pass


class DivergedTraining(TrainingError):
    pass


# baselines / evaluation
class TooFewPoints(DataError):
    pass


class DegenerateWeights(DataError):
    pass


class DegenerateFeatures(DataError):
    pass

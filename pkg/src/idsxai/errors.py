"""Exception types raised across the package.

Input-validation problems derive from :class:`DataValidationError` (CLI exit
code 2); stale or mismatched artifacts derive from :class:`ArtifactMismatch`
(exit code 3).
"""


class IdsXaiError(Exception):
    pass


class DataValidationError(IdsXaiError, ValueError):
    pass


class MissingColumn(DataValidationError):
    def __init__(self, name, path=None):
        self.name = name
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"missing column {name!r}{where}")


class EmptyFile(DataValidationError):
    pass


class DuplicateHeader(DataValidationError):
    pass


class SchemaMismatch(DataValidationError):
    pass


class AllMissingColumn(DataValidationError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"column {name!r} has no non-missing values to impute from")


class UnseenCategory(DataValidationError):
    def __init__(self, feature, value):
        self.feature = feature
        self.value = value
        super().__init__(f"category {value!r} of feature {feature!r} not seen during fitting")


class TooFewRows(DataValidationError):
    pass


class SingletonMinority(DataValidationError):
    pass


class BadK(DataValidationError):
    pass


class EmptyTraining(DataValidationError):
    pass


class ConfigError(DataValidationError):
    pass


class EmptyNode(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class DegenerateDesign(ValueError):
    pass


class EmptyExplanations(ValueError):
    pass


class FeatureSetMismatch(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class ArtifactMismatch(IdsXaiError):
    pass

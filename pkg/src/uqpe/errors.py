"""Exception hierarchy. Every error carries the pipeline stage it came from."""


class UqpeError(Exception):
    stage = "unknown"
    hint = ""

    def __init__(self, message, *, stage=None, hint=None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage
        if hint is not None:
            self.hint = hint

    def to_dict(self):
        return {"stage": self.stage, "message": str(self), "hint": self.hint}


class SchemaError(UqpeError):
    stage = "ingest"
    hint = "check the column names passed on the command line against the CSV header"


class EmptyDataError(UqpeError):
    stage = "ingest"
    hint = "no complete rows survived listwise deletion; inspect missing values"


class DimensionError(UqpeError):
    stage = "basis"
    hint = "covariate vector length must equal the dataset's column count"


class DegenerateBasisError(UqpeError):
    stage = "basis"
    hint = "drop constant columns before estimation"


class DegenerateOutcomeError(UqpeError):
    stage = "lasso_logit"
    hint = "the indicator 1{Y <= q} is (nearly) constant; narrow the quantile grid"


class ExtrapolationError(UqpeError):
    stage = "lasso_logit"
    hint = "requested q lies outside the fitted quantile grid; enlarge the grid"


class DataError(UqpeError):
    stage = "riesz"
    hint = "non-finite values in the evaluated dictionary"


class ZeroBandwidthError(UqpeError):
    stage = "density"
    hint = "the outcome has zero sample variance"


class DegenerateWeightsError(UqpeError):
    stage = "bootstrap"
    hint = "multiplier weight sum is numerically zero; redraw"


class DensityFloorError(UqpeError):
    stage = "uqpe"
    hint = "estimated outcome density at the quantile is below the floor; check tau range"


class DegenerateDrawsError(UqpeError):
    stage = "bootstrap"
    hint = "bootstrap draws have zero interquartile range"


class BaselineInfeasibleError(UqpeError):
    stage = "rif_logit"
    hint = "unpenalized logit needs p < N"


class StudyError(UqpeError):
    stage = "simulation"
    hint = "too many Monte Carlo replications failed; inspect per-replication errors"


class ConfigError(UqpeError):
    stage = "config"
    hint = "check the configuration values"

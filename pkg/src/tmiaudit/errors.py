"""Exception types raised across the package."""


class TMIError(Exception):
    """Base class for all package errors."""


class InputShapeError(TMIError, ValueError):
    pass


class NumericInputError(TMIError, ValueError):
    pass


class LabelError(TMIError, ValueError):
    pass


class EmptyDataError(TMIError, ValueError):
    pass


class ScheduleError(TMIError, ValueError):
    pass


class SpecError(TMIError, ValueError):
    pass


class ConfigError(TMIError, ValueError):
    pass


class StrategyError(TMIError, ValueError):
    pass


class CheckpointError(TMIError, ValueError):
    """Raised when a checkpoint or ensemble directory cannot be read back."""


class MembershipIdError(TMIError, KeyError):
    pass


class FitError(TMIError, ValueError):
    pass


class DegenerateSplitError(TMIError, ValueError):
    """All shadow models agree on the membership of a challenge point."""

    def __init__(self, challenge_id, n_in, n_out):
        self.challenge_id = challenge_id
        self.n_in = n_in
        self.n_out = n_out
        super().__init__(
            f"degenerate IN/OUT split for challenge {challenge_id}: "
            f"{n_in} IN, {n_out} OUT"
        )


class MetaTrainingError(TMIError, ValueError):
    pass


class MaskError(TMIError, ValueError):
    pass


class MetricError(TMIError, ValueError):
    pass


class StageError(TMIError, RuntimeError):
    """A pipeline stage failed; carries the stage name and seed context."""

    def __init__(self, stage, seed, cause):
        self.stage = stage
        self.seed = seed
        self.cause = cause
        super().__init__(f"stage {stage!r} failed (master_seed={seed}): {cause}")

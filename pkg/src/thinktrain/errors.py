"""Exception types shared across the pipeline."""


class RecipeError(Exception):
    """Base class for every error raised by this package."""


class MalformedFormat(RecipeError):
    """Generation does not follow the single-think-block grammar."""


class MissingResponse(RecipeError):
    """Sample lacks the response text needed to build a training target."""


class EmptyTruth(RecipeError):
    """Ground-truth answer is empty, so verification is undefined."""


class EmptyBatch(RecipeError):
    """An estimator was asked to average over zero items."""


class GenerationFailure(RecipeError):
    """Fewer usable generations were produced than requested."""


class VerdictMismatch(RecipeError):
    """Number of judge verdicts does not match the number of candidates."""


class InsufficientCoT(RecipeError):
    """Reasoning-chain pool is smaller than the requested share."""


class PoolTooSmall(RecipeError):
    """A sampling pool cannot satisfy the requested draw size."""


class OutOfVocabulary(RecipeError):
    """Text contains a token the policy vocabulary does not know."""


class EmptyTrajectory(RecipeError):
    """Trajectory has no generated tokens."""


class LengthMismatch(RecipeError):
    """Parallel sequences differ in length."""


class NonFiniteLoss(RecipeError):
    """A training loss or gradient left the finite range; the run aborts."""


class SeriesTooShort(RecipeError):
    """Metric series is shorter than the analysis window."""


class UnsupportedKind(RecipeError):
    """Generator kind is unknown or unsupported by the given vocabulary."""


class JudgeUnavailable(RecipeError):
    """Remote judge could not be reached after the configured retries."""


class JudgeTimeout(JudgeUnavailable):
    """Every attempt to reach the remote judge timed out."""


class JudgeProtocolError(RecipeError):
    """Remote judge answered, but the payload violates the wire protocol."""


class EmptyDistilledSet(RecipeError):
    """Distillation filter retained nothing; carries the rejection histogram."""

    def __init__(self, message: str, histogram: dict | None = None):
        super().__init__(message)
        self.histogram = dict(histogram or {})

"""Exception types shared across the package.

Every error raised by iclcot derives from IclcotError so callers can catch
the whole family; the CLI maps specific subclasses to exit codes.
"""


class IclcotError(Exception):
    """Base class for all iclcot errors."""


class ShapeError(IclcotError):
    """Operand dimensions (or precision tags) are incompatible."""


class ContractError(IclcotError):
    """A caller violated an operation's precondition."""


class CapacityError(IclcotError):
    """A token sequence exceeds the model's maximum length."""


class ConfigError(IclcotError):
    """A config file is invalid; `field` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NanLossError(IclcotError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, lr: float):
        super().__init__(f"non-finite loss at step {step} (lr={lr})")
        self.step = step
        self.lr = lr


class EmptyPrunedPoolError(IclcotError):
    """Pruning removed every demonstration; carries the smallest observed
    loss so callers can pick a workable threshold."""

    def __init__(self, min_loss: float):
        super().__init__(
            f"no demonstration survived pruning (min observed loss {min_loss:.6g}; "
            f"raise the threshold above it)"
        )
        self.min_loss = min_loss


class PipelineError(IclcotError):
    """The augment/prune/select pipeline failed irrecoverably."""


class MetricUndefinedError(IclcotError):
    """A metric has no defined value for the given inputs (e.g. single-class AUC)."""


class ReportMismatchError(IclcotError):
    """Two reports cannot be compared (different context-length sets)."""


class CheckpointError(IclcotError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """Bad magic, unparseable header, or truncated payload."""


class CheckpointMismatchError(CheckpointError):
    """Checkpoint header's model config disagrees with the runtime config."""


class CheckpointIntegrityError(CheckpointError):
    """Payload checksum does not match the stored CRC."""


class LlmError(IclcotError):
    """Base class for text-endpoint client errors."""


class TransportError(LlmError):
    """Connection/timeout failure that persisted through retries."""


class RequestError(LlmError):
    """The endpoint rejected the request (HTTP 4xx)."""

    def __init__(self, status: int, body_excerpt: str):
        super().__init__(f"request rejected with HTTP {status}: {body_excerpt}")
        self.status = status
        self.body_excerpt = body_excerpt


class ServiceError(LlmError):
    """The endpoint kept failing (HTTP 5xx) after all retries."""

    def __init__(self, attempts: int, last_status: int | None = None):
        super().__init__(
            f"service unavailable after {attempts} attempts"
            + (f" (last status {last_status})" if last_status is not None else "")
        )
        self.attempts = attempts
        self.last_status = last_status


class UnsupportedFeatureError(LlmError):
    """The endpoint lacks a required capability (e.g. token log-probabilities)."""

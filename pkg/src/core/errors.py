"""
Exception hierarchy for hurpipe.

Every failure the pipeline reports derives from HurpipeError so
the CLI can turn it into a clean exit status. Value-like errors also derive
from ValueError.
"""

from typing import Optional, Tuple


class HurpipeError(Exception):
    """Base class for all pipeline errors."""


class TileFormatError(HurpipeError):
    """File is not a HURT tile (bad magic or unknown kind)."""


class TileCorruptionError(HurpipeError):
    """HURT payload is truncated or has trailing bytes."""


class TileVersionError(HurpipeError):
    """HURT file declares a version this reader does not support."""

    def __init__(self, version: int):
        super().__init__(f"unsupported HURT version {version}")
        self.version = version


class ConfigError(HurpipeError, ValueError):
    """Invalid configuration value or combination."""


class ShapeError(HurpipeError, ValueError):
    """Array or raster dimensions do not agree."""


class DataError(HurpipeError, ValueError):
    """Input values outside the accepted domain."""

    def __init__(self, message: str, value: Optional[int] = None,
                 index: Optional[Tuple[int, ...]] = None):
        super().__init__(message)
        self.value = value
        self.index = index


class CoverageError(HurpipeError):
    """A raster or table does not cover what the operation needs."""


class EmptyInputError(HurpipeError, ValueError):
    """Nothing left to compute on (all pixels ignored, no clusters, ...)."""


class DegenerateClassError(HurpipeError, ValueError):
    """A class weight is undefined because the class proportion is zero."""

    def __init__(self, class_id: int, strategy: str):
        super().__init__(f"class {class_id} has proportion 0; "
                         f"'{strategy}' weighting is undefined (drop or floor it)")
        self.class_id = class_id
        self.strategy = strategy


class DivergenceError(HurpipeError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) in epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class ContractError(HurpipeError):
    """A pluggable classifier broke its input/output contract."""


class LeakageError(HurpipeError):
    """A country was scored by a model that saw it during training."""


class NoSettlementError(HurpipeError):
    """No human-settlement pixel lies within reach of a DHS cluster."""

    def __init__(self, cluster_id: str):
        super().__init__(f"cluster {cluster_id}: no settlement pixel within the displacement radius")
        self.cluster_id = cluster_id


class StageError(HurpipeError):
    """A pipeline stage failed; wraps the underlying error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause

"""Exception types shared across the package."""


class EelsVaeError(Exception):
    pass


class DimensionError(EelsVaeError, ValueError):
    pass


class ContractViolation(EelsVaeError, ValueError):
    pass


class FormatError(EelsVaeError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(EelsVaeError, ValueError):
    pass


class DegenerateSpectrumError(EelsVaeError, ValueError):
    def __init__(self, x: int, y: int):
        super().__init__(f"spectrum at (x={x}, y={y}) has zero total intensity")
        self.x = x
        self.y = y


class CoverageError(EelsVaeError, ValueError):
    def __init__(self, missing):
        missing = list(missing)
        shown = ", ".join(f"({x},{y})" for x, y in missing[:10])
        more = "" if len(missing) <= 10 else f" ... ({len(missing)} total)"
        super().__init__(f"pixels not covered by any shard: {shown}{more}")
        self.missing = missing


class WindowError(EelsVaeError, ValueError):
    pass


class DegenerateHistogramError(EelsVaeError, ValueError):
    pass


class UndefinedCorrelationError(EelsVaeError, ValueError):
    pass


class UndefinedSimilarityError(EelsVaeError, ValueError):
    pass


class TrainingDiverged(EelsVaeError, RuntimeError):
    def __init__(self, epoch: int, batch: int, component: str):
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch} (component: {component})")
        self.epoch = epoch
        self.batch = batch
        self.component = component

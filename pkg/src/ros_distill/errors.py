"""Exception hierarchy shared across the package."""


class RosError(Exception):
    """Base class for every error raised by ros_distill."""


class CorpusParseError(RosError):
    def __init__(self, path, offset, msg):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{self.path} (offset {offset}): {msg}")


class SchemaViolation(RosError):
    def __init__(self, slot, where=""):
        self.slot = slot
        suffix = f" in {where}" if where else ""
        super().__init__(f"unknown slot {slot!r}{suffix}")


class ValidationError(RosError):
    pass


class PoolExhausted(RosError):
    pass


class ProviderError(RosError):
    pass


class EmptyReasoning(ProviderError):
    pass


class DimensionError(RosError):
    pass


class DegenerateVector(RosError):
    pass


class NumericalError(RosError):
    pass


class SelectionError(RosError):
    pass


class ConsistencyError(RosError):
    pass


class DuplicateError(RosError):
    pass


class MissingCell(RosError):
    def __init__(self, j, i):
        self.cell = (j, i)
        super().__init__(f"accuracy matrix cell a[{j},{i}] is missing")

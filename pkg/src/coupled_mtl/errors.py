"""Exception hierarchy shared by all modules."""


class CoupledMTLError(Exception):
    """Base class; ``kind`` is the short tag printed by the CLI."""

    kind = "error"


class InvalidInputError(CoupledMTLError, ValueError):
    kind = "invalid-input"


class ConfigError(CoupledMTLError, ValueError):
    kind = "config"


class ShapeError(CoupledMTLError, ValueError):
    kind = "shape"


class LabelError(CoupledMTLError, ValueError):
    kind = "label"


class ParseError(CoupledMTLError, ValueError):
    kind = "parse"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InferenceError(CoupledMTLError, ValueError):
    kind = "inference"


class MetricError(CoupledMTLError, ValueError):
    kind = "metric"


class StateError(CoupledMTLError, RuntimeError):
    kind = "state"


class DivergenceError(CoupledMTLError, RuntimeError):
    kind = "divergence"

    def __init__(self, message, step):
        self.step = step
        super().__init__(f"step {step}: {message}")

"""Exception types shared across the package.

Every domain error carries a short machine-readable ``name`` that the CLI
prints when exiting with status 1.
"""


class SynthError(Exception):
    name = "error"


class InvalidArgumentError(SynthError, ValueError):
    name = "invalid-argument"


class InvalidRangeError(InvalidArgumentError):
    name = "invalid-range"


class InvalidSizeError(InvalidArgumentError):
    name = "invalid-size"


class InvalidTimingError(InvalidArgumentError):
    name = "invalid-timing"


class ShapeError(SynthError, ValueError):
    name = "shape-error"


class SequenceSyntaxError(SynthError, ValueError):
    name = "sequence-syntax"


class SequenceSemanticError(SynthError, ValueError):
    name = "sequence-semantic"


class CorruptionError(SynthError):
    name = "corruption"


class VersionError(SynthError):
    name = "version"


class IntegrityError(SynthError):
    name = "integrity"


class InsufficientPeaksError(SynthError, ValueError):
    name = "insufficient-peaks"


class DivergenceError(SynthError, ArithmeticError):
    name = "divergence"

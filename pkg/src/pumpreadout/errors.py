"""Exception hierarchy for the simulation pipeline.

Exit-code mapping used by the CLI: ConfigError -> 2, ConvergenceError and
its subclasses -> 3, I/O problems (OSError, SnapshotError) -> 4.
"""


class PumpReadoutError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(PumpReadoutError):
    """A physical or numerical parameter violates its precondition."""


class ShapeError(PumpReadoutError):
    """Grids, channel counts or array shapes do not match."""


class StepSizeError(PumpReadoutError):
    """Chebyshev expansion order exceeded its hard cap; reduce dt."""


class ConvergenceError(PumpReadoutError):
    """An iterative solve failed to reach its tolerance."""


class AccuracyError(ConvergenceError):
    """A quadrature or discretization failed its refinement check."""


class GeometryError(InvalidParameterError):
    """A wavepacket or grid does not fit the device geometry."""


class RepresentationError(PumpReadoutError):
    """Operation applied in the wrong basis representation."""


class ExtractionError(ConvergenceError):
    """Measurement-operator extraction failed its completeness check."""


class PropagationTimeoutError(ConvergenceError):
    """Scattering run did not separate within the configured max time."""


class EdgeDensityError(PumpReadoutError):
    """Probability reached the grid edge; enlarge the grid."""


class BasisConstructionError(ConvergenceError):
    """Qubit basis localization below the required threshold."""


class ConfigError(PumpReadoutError):
    """Run configuration is malformed or violates a precondition."""


class SnapshotError(PumpReadoutError):
    """Snapshot file is corrupt or has a version/CRC mismatch."""

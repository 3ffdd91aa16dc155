"""Exception types shared across the package."""


class GridProbeError(Exception):
    """Base class for all gridprobe errors."""


class StructureError(GridProbeError):
    """A graph or parent array does not encode a rooted spanning tree."""


class FeederError(GridProbeError):
    """Invalid or electrically infeasible feeder model (e.g. singular Laplacian)."""


class SolverError(GridProbeError):
    """An iterative solver diverged or failed to converge."""


class ReconstructionError(GridProbeError):
    """Probing columns are inconsistent with any radial topology."""


class ParseError(GridProbeError):
    """Malformed feeder or scenario file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line

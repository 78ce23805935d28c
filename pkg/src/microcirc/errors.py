"""Exception hierarchy shared by all solver and I/O modules."""


class MicrocircError(Exception):
    """Base class for all toolkit errors."""


class GeometryError(MicrocircError):
    """Base class for unit-cell geometry violations."""


class OverlapError(GeometryError):
    """Artery and vein primitives overlap (or touch) where they must not."""


class ResolutionError(GeometryError):
    """A primitive is too thin for the requested grid to resolve."""


class NoFluidError(GeometryError):
    """The selected fluid/solute phase contains no voxels."""


class DisconnectedFluidError(GeometryError):
    """The fluid phase does not percolate in the forcing direction."""


class SolverError(MicrocircError):
    """Base class for linear-algebra failures."""


class ConvergenceError(SolverError):
    """Krylov iteration stalled or exceeded its iteration budget."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularSystemError(SolverError):
    """Assembled system is singular (lost definiteness, no dissipation)."""


class EllipticityError(MicrocircError):
    """A diffusion coefficient violates the declared ellipticity bound."""


class MixedProvenanceError(MicrocircError):
    """Cell solutions being combined were produced from different setups."""


class NegativeConcentrationError(SolverError):
    """A transport step produced concentrations below the positivity floor."""


class ShapeMismatchError(MicrocircError):
    """Fields being compared do not live on compatible grids/times."""


class ParseError(MicrocircError):
    """Configuration text could not be parsed."""

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class ValidationError(MicrocircError):
    """Parsed configuration violates the schema; collects all violations."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class IoError(MicrocircError):
    """Artifact could not be written or read back."""

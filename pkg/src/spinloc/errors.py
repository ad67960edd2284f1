"""Exception types shared across the package."""


class SpinlocError(Exception):
    """Base class for errors raised by this package."""


class FrameError(SpinlocError):
    """Unknown coordinate frame, or arithmetic mixing vectors from different frames."""


class DomainError(SpinlocError, ValueError):
    """Input outside the physical domain of an operation (e.g. radius below the
    point-dipole limit, non-invertible coupling pair, enhancement resonance)."""


class InconsistentInputError(SpinlocError, ValueError):
    """Mutually inconsistent observations, e.g. frequencies that imply a negative
    squared transverse coupling (usually mis-identified spectral peaks)."""


class IdentifiabilityError(SpinlocError):
    """The data cannot constrain the requested parameters (flat cost surface,
    degenerate sensor geometry)."""


class ConvergenceError(SpinlocError):
    """An iterative fit did not converge within its iteration budget."""


class ParseError(SpinlocError):
    """Malformed input file. Carries file path and 1-based line number."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = int(line)
        super().__init__(f"{path}:{line}: {message}")

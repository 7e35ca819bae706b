"""
Exception types raised across the nlwg pipeline
"""


class NlwgError(Exception):
    """Base class for every error a module reports to its caller"""


class DispersionRangeError(NlwgError, ValueError):
    """Wavelength outside a dispersion model's validity window"""

    def __init__(self, model: str, wavelength_nm: float, window: tuple[float, float]):
        self.model = model
        self.wavelength_nm = wavelength_nm
        self.window = window
        super().__init__(
            f"{model}: wavelength {wavelength_nm:g} nm outside validity window "
            f"[{window[0]:g}, {window[1]:g}] nm"
        )


class StackFormatError(NlwgError, ValueError):
    """Stack or config document that does not follow the schema"""

    def __init__(self, message: str, path: str = "", line: int | None = None):
        self.path = path
        self.line = line
        where = f"line {line}" if line is not None else (path or "document")
        if line is not None and path:
            where = f"line {line}, {path}"
        super().__init__(f"{where}: {message}")


class StackValidationError(NlwgError, ValueError):
    """Stack that parses but breaks a physical invariant"""


class ResolutionError(NlwgError, ValueError):
    """Grid too coarse for the requested computation"""


class DomainError(NlwgError, ValueError):
    """Argument outside the mathematical domain of an operation"""


class ShapeError(NlwgError, ValueError):
    """Arrays sampled on incompatible grids"""


class TransparencyError(NlwgError, ValueError):
    """Layer absorbing at the pump wavelength while the constraint is on"""


class ModeSolverError(NlwgError, RuntimeError):
    """Root bracketing failed inside the reference eigensolver"""

    def __init__(self, message: str, interval: tuple[float, float]):
        self.interval = interval
        super().__init__(f"{message} (scanned n_eff in [{interval[0]:.6f}, {interval[1]:.6f}])")


class NoPhaseMatchingError(NlwgError, ValueError):
    """Longitudinal phase matching has no real pump angle"""

    def __init__(self, rhs: float):
        self.rhs = rhs
        super().__init__(f"no real phase-matching angle: sin(theta) would be {rhs:.6g}")


class CompositionError(NlwgError, TypeError):
    """Design-path function used a primitive that breaks differentiation"""

    def __init__(self, primitive: str):
        self.primitive = primitive
        super().__init__(f"non-differentiable primitive on the design path: {primitive}")


class DatasetGenerationError(NlwgError, RuntimeError):
    """Sampler kept producing structures without a guided mode"""


class TrainingDivergenceError(NlwgError, RuntimeError):
    """Surrogate training loss blew up"""


class IndeterminateDiscrepancyError(NlwgError, ValueError):
    """Reference FOM too small for a relative discrepancy"""


class DegenerateFilterError(NlwgError, ValueError):
    """Spectral filter window keeps no amplitude"""


class OptimizationAborted(NlwgError, RuntimeError):
    """Non-finite FOM or gradient; the last valid state is attached"""

    def __init__(self, message: str, last_state=None):
        self.last_state = last_state
        super().__init__(message)

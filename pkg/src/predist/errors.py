"""Exception types shared across the package."""


class PlannerError(Exception):
    """Base class for all predist errors."""


class InfeasibleInputError(PlannerError):
    """Inputs that cannot be satisfied (maps to CLI exit code 2)."""


class InfeasibleDensityError(InfeasibleInputError):
    def __init__(self, target_density: float, achieved_density: float, attempts: int):
        self.target_density = target_density
        self.achieved_density = achieved_density
        self.attempts = attempts
        super().__init__(
            f"could not reach edge density {target_density:.4f} after {attempts} "
            f"attempts (closest achieved: {achieved_density:.4f}); the geometry "
            f"cannot supply enough candidate edges within the link-length limit"
        )


class InfeasibleRangeError(InfeasibleInputError):
    def __init__(self, requested: int, available: int, span_km: tuple[float, float]):
        self.requested = requested
        self.available = available
        self.span_km = span_km
        super().__init__(
            f"only {available} node pairs satisfy the distance range, {requested} "
            f"requested; achievable pair distances span "
            f"[{span_km[0]:.2f}, {span_km[1]:.2f}] km"
        )


class TopologyFormatError(PlannerError):
    """Malformed or inconsistent topology / request / plan file."""

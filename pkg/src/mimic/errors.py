"""Exception types raised across the package."""


class MimicError(Exception):
    pass


class QueryOutsideSupport(MimicError, ValueError):
    """The queried point carries no mass of mu_t, so it cannot be a state."""


class UnsupportedFamily(MimicError, ValueError):
    pass


class InvalidProfile(MimicError, ValueError):
    pass


class NoDispersion(MimicError, ValueError):
    """The family does not move mass from a central interval to the tails."""


class ConvergenceFailure(MimicError, RuntimeError):
    pass


class QuadratureFailure(MimicError, RuntimeError):
    pass


class UnboundedRate(MimicError, ValueError):
    pass


class UnsupportedExample(MimicError, ValueError):
    pass


class NonFiniteVariationInput(MimicError, ValueError):
    pass


class ConfigError(MimicError, ValueError):
    pass

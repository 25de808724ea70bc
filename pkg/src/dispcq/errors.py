"""Exception types.  CLI exit codes: ConfigError -> 2, NumericalError -> 3."""


class DispcqError(Exception):
    pass


class ConfigError(DispcqError, ValueError):
    pass


class MaterialError(ConfigError):
    pass


class DomainError(DispcqError, ValueError):
    """Argument outside the domain of definition (Re s <= 0, |zeta| >= 1, x = 0, ...)."""


class NumericalError(DispcqError, RuntimeError):
    pass


class PassivityError(NumericalError):
    pass


class CoercivityError(NumericalError):
    pass


class MeshError(DispcqError, ValueError):
    pass

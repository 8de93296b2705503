"""Exception types raised across the package."""


class BanditError(ValueError):
    """Base class for all package errors."""


class NonStochasticRow(BanditError):
    pass


class NegativeReward(BanditError):
    pass


class DomainError(BanditError):
    pass


class InvalidBudget(BanditError):
    pass


class InstanceTooLarge(BanditError):
    pass


class InfeasibleCV(BanditError):
    pass

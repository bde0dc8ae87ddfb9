"""
Exception hierarchy for basketdemand.

Every error raised on purpose by the package derives from BasketDemandError so the command line front-end can
map it onto an exit code (1 for usage/config/data problems, 2 for numerical or budget failures).
"""


class BasketDemandError(Exception):
    exit_code = 2


class InvalidInputError(BasketDemandError, ValueError):
    exit_code = 1


class ModelAssumptionError(BasketDemandError):
    """An interaction matrix that is not positive definite, or a similar breach of the model's assumptions."""


class NumericalError(BasketDemandError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, msg, best=None, history=None):
        super().__init__(msg)
        self.best = best
        self.history = history or []


class DomainError(NumericalError):
    def __init__(self, msg, goods=()):
        super().__init__(msg)
        self.goods = list(goods)


class IdentificationError(NumericalError):
    def __init__(self, msg, columns=()):
        super().__init__(msg)
        self.columns = list(columns)


class DataError(BasketDemandError):
    exit_code = 1

    def __init__(self, msg, attrition=None, rejects=None):
        super().__init__(msg)
        self.attrition = attrition or {}
        self.rejects = rejects or []


class ConfigError(BasketDemandError):
    exit_code = 1

class CsoeError(Exception):
    pass


class ModelViolationError(CsoeError, ValueError):
    """
    Data or a scenario breaks an assumption of the two-way exchange model: non-positive queuing delays, too many
    asymmetric paths, an asymmetry smaller than the detection threshold or a non-positive skew
    """


class NonFiniteLikelihoodError(CsoeError, ArithmeticError):
    def __init__(self, message: str, path: int | None = None, exchange: int | None = None):
        super().__init__(message)
        self.path = path
        self.exchange = exchange


class LikelihoodDecreaseError(CsoeError, RuntimeError):
    """
    An iterative fit lost more log-likelihood than round-off allows. It means an update equation is wrong
    """


class GridTooSmallError(CsoeError, ValueError):
    pass

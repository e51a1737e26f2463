"""Exception types shared across the package."""


class HetPsdmError(Exception):
    """Base class for all package errors."""


class MissingColumn(HetPsdmError):
    pass


class NonFiniteValue(HetPsdmError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class NonPositiveValue(HetPsdmError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class OverlappingStripes(HetPsdmError):
    pass


class RankDeficient(HetPsdmError):
    pass


class NonPositiveWeight(HetPsdmError):
    pass


class InsufficientData(HetPsdmError):
    pass


class DegenerateBranch(HetPsdmError):
    pass


class NonPositiveResponse(HetPsdmError):
    pass


class ZeroResidualVariance(HetPsdmError):
    pass


class NotConverged(HetPsdmError):
    pass


class NotPositiveDefinite(HetPsdmError):
    pass


class PsiNotPD(NotPositiveDefinite):
    pass


class InvalidDof(HetPsdmError):
    pass


class DegenerateChains(HetPsdmError):
    pass


class DegenerateSubmatrix(HetPsdmError):
    pass


class DomainError(HetPsdmError):
    pass

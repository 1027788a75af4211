"""Exception hierarchy shared by all modules."""


class SSMCError(Exception):
    """Base class for package errors."""


class DomainError(SSMCError, ValueError):
    pass


class TruncationFailure(SSMCError):
    """A transition row could not be enumerated to the requested mass."""


class ExponentDiverges(SSMCError):
    """The exponential moment defining the Laplace exponent is infinite."""


class Indeterminate(SSMCError):
    pass


class TailUnbounded(SSMCError):
    pass


class HorizonTooShort(SSMCError):
    pass


class EventBudgetExceeded(SSMCError):
    pass


class Unstable(SSMCError):
    """An n-indexed diagnostic did not settle on the evaluated grid."""


class NotFound(SSMCError):
    pass


class AllCensored(SSMCError):
    pass


class CensoringBias(SSMCError):
    pass


class ConfigError(SSMCError, ValueError):
    pass

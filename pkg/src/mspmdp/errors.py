"""Exception hierarchy shared by every module."""


class MspMdpError(Exception):
    pass


class InvalidDimension(MspMdpError, ValueError):
    pass


class EvaluatorError(MspMdpError, RuntimeError):
    pass


class MissingRegularity(MspMdpError, ValueError):
    pass


class SlaterViolation(MspMdpError, ValueError):
    pass


class InvalidBox(MspMdpError, ValueError):
    pass


class InvalidHistory(MspMdpError, ValueError):
    pass


class BudgetExceeded(MspMdpError, RuntimeError):
    pass


class Infeasible(MspMdpError, RuntimeError):
    pass


class MaxIterations(MspMdpError, RuntimeError):
    pass


class PolicyInfeasible(MspMdpError, ValueError):
    pass


class UnknownExample(MspMdpError, KeyError):
    pass


class NotApplicable(MspMdpError, ValueError):
    pass


class InvalidTrees(MspMdpError, ValueError):
    pass


class InvalidInput(MspMdpError, ValueError):
    pass


class InvalidModulus(MspMdpError, ValueError):
    pass


class MissingGrowth(MspMdpError, ValueError):
    pass


class InvalidExponent(MspMdpError, ValueError):
    pass

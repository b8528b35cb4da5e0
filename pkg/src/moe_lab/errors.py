"""Exception types shared across the package.

The CLI maps these onto exit codes: contract violations exit with 2,
I/O problems with 3 (see :mod:`moe_lab.cli`).
"""


class ContractViolation(ValueError):
    """An argument breaks a documented precondition (shape, range, flag)."""


class TransformDomainError(ValueError):
    """A gate transform was evaluated outside its domain (e.g. log|x| at 0)."""


class ParameterRangeError(ValueError):
    """A derived quantity left its admissible range (e.g. negative gate mass)."""


class InconclusiveError(RuntimeError):
    """A numerical check could not decide (e.g. vanishing gradients)."""

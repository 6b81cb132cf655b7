"""Exception types shared across the package.

The CLI maps ContractError to exit code 1 and NumericalError to exit code 2.
"""


class ContractError(Exception):
    """A caller violated a documented precondition or file/config contract."""


class NumericalError(Exception):
    """A computation produced non-finite values and cannot continue."""

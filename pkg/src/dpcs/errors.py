"""Exception types shared across the package."""


class DPCSError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DPCSError, ValueError):
    """Invalid scenario, config file or incompatible checkpoint."""


class ContractViolation(DPCSError, ValueError):
    """An operation was called with arguments outside its contract."""


class NumericError(DPCSError, FloatingPointError):
    """A non-finite value appeared in a loss or gradient."""


class InsufficientDataError(DPCSError):
    """Replay buffer holds fewer transitions than the requested batch."""


class ImputationError(ConfigurationError):
    """Missing profile values could not be filled from earlier days."""

    def __init__(self, gaps):
        self.gaps = list(gaps)
        shown = ", ".join(f"{h}/{c}@{ts}" for h, c, ts in self.gaps[:10])
        more = "" if len(self.gaps) <= 10 else f" (+{len(self.gaps) - 10} more)"
        super().__init__(f"cannot impute {len(self.gaps)} value(s): {shown}{more}")

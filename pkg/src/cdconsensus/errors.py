"""Exception hierarchy shared by the package."""


class ConsensusError(Exception):
    """Base class for all errors raised by cdconsensus."""


class DimensionError(ConsensusError, ValueError):
    pass


class NotMMatrix(ConsensusError):
    """H = L + D is not a nonsingular M-matrix (leader does not root a spanning tree)."""


class SolveFailed(ConsensusError):
    pass


class NoConvergence(ConsensusError):
    pass


class InvalidCertificate(ConsensusError, ValueError):
    pass


class DeltaTooLarge(ConsensusError, ValueError):
    pass


class OutOfOrderSample(ConsensusError):
    """A sample arrived with a timestamp older than the current anchor."""


class MissingEstimate(ConsensusError, KeyError):
    pass


class ConfigInvalid(ConsensusError, ValueError):
    pass


class NumericalBlowup(ConsensusError, FloatingPointError):
    def __init__(self, t, norm):
        super().__init__(f"state norm {norm:.3g} exceeded guard at t={t:.6g} s")
        self.t = t
        self.norm = norm

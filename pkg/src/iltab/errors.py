"""Exception types shared across the library."""


class IltabError(Exception):
    """Base class for all library-specific errors."""


class ValidationFailure(IltabError):
    """An MDP or policy violated a structural invariant."""


class DimensionMismatch(IltabError):
    """Array shapes disagree with the declared factored sizes."""


class NotADistribution(IltabError):
    """A vector expected to be a probability distribution is not."""


class SolverError(IltabError):
    """An iterative solver exceeded its iteration cap."""


class ReducibleChain(IltabError):
    """The policy-induced chain is not a single closed communicating class."""


class Periodic(IltabError):
    """The policy-induced chain failed the aperiodicity test."""


class ZeroCellMass(IltabError):
    """Some local (state, action) aggregate carries zero stationary mass."""


class TooLarge(IltabError):
    """Instance exceeds the brute-force parameter cap."""


class InvalidPartition(IltabError):
    """A grouping does not partition the agent set."""


class ExplorationViolation(IltabError):
    """A sampling policy assigns zero probability to some local action."""


class NonFinite(IltabError):
    """A parameter array contains NaN or infinity."""

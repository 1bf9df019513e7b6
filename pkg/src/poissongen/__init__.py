"""Poissonized Markov-chain learning algorithms: entropy flow, modified
log-Sobolev constants and generalization bounds, with exact checks."""

__version__ = "0.1.0"

from .errors import NumericFailure, PoissonGenError, PreconditionError  # noqa: E402,F401

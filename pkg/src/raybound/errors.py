"""Exception types shared across raybound modules."""


class RayboundError(Exception):
    """Base class for all raybound errors."""


class NotInDomain(RayboundError):
    """Point lies outside the domain closure beyond tolerance."""


class CrossingBoundExceeded(RayboundError):
    """A ray crossed more interfaces than the partition's declared bound.

    Signals a partition that violates the generalized convexity condition
    (or a max_crossings value set too low for the configured interfaces).
    """


class SpanExceedsChord(RayboundError):
    """Requested integration span extends past the backward chord length."""


class NotIncoming(RayboundError):
    """Boundary direction pair is not in the incoming set (n(y).xi >= 0)."""


class NotOutgoing(RayboundError):
    """Boundary direction pair is not in the outgoing set (n(y).xi <= 0)."""


class NotContractive(RayboundError):
    """Certified contraction factor too close to 1; the geometric tail bound
    is useless and the solver refuses to iterate without a certificate."""


class IterationBudgetExceeded(RayboundError):
    """Certified term count for the requested tolerance exceeds max_terms."""


class SideMisclassification(RayboundError):
    """Straddle samples backtrace to sides inconsistent with the expected
    A/B arrangement; indicates a geometry or tolerance bug."""


class DynamicRangeExhausted(RayboundError):
    """Predicted jump is below representable floating-point range."""


class GridTooCoarse(RayboundError):
    """Sinogram sampling too coarse for filtered backprojection."""


class MissingArtifact(RayboundError):
    """A pipeline stage input declared by an upstream manifest is absent."""


class ConfigError(RayboundError):
    """Run configuration is invalid; the message names the offending key."""

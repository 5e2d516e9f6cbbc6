"""Exception types raised across the package."""


class GraphFieldError(Exception):
    """Base class for all package errors."""


class DisconnectedGraph(GraphFieldError):
    pass


class DegenerateEdge(GraphFieldError):
    pass


class PointOffGraph(GraphFieldError):
    pass


class BrokenChain(GraphFieldError):
    """Consecutive path pieces do not meet at a common vertex."""


class AmbiguousChain(GraphFieldError):
    """Consecutive edges share both endpoints, so the traversal is ambiguous."""


class NotPositiveDefinite(GraphFieldError):
    pass


class NonConvergence(GraphFieldError):
    pass

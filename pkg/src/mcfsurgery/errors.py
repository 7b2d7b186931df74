"""Exception hierarchy shared by all modules."""


class MCFError(Exception):
    """Base class for every error raised by this package."""


class MeshError(MCFError):
    pass


class NonManifoldEdge(MeshError):
    pass


class OrientationError(MeshError):
    pass


class OpenChain(MeshError):
    pass


class DegenerateLoop(MeshError):
    pass


class DegenerateElement(MeshError):
    pass


class UnsupportedOrder(MCFError):
    pass


class ColdHistory(MCFError):
    pass


class SolverDivergence(MCFError):
    pass


class ProjectionStall(MCFError):
    pass


class ZeroGradient(MCFError):
    pass


class EmptySurface(MCFError):
    pass


class InvalidEdgeCount(MCFError):
    pass


class EdgeCountMismatch(MCFError):
    pass


class OrientationMismatch(MCFError):
    pass


class ZeroNormal(MCFError):
    pass


class EmptyPatch(MCFError):
    pass


class SurgeryFailed(MCFError):
    """Wraps a failure inside the surgery pipeline, keeping the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report

"""Exception hierarchy.

Every error carries a short upper-case ``code`` so the CLI can report it in a
machine-parseable way and map it to a nonzero exit status.
"""


class LagRCAError(Exception):
    code = "ERROR"
    exit_status = 1


class GraphError(LagRCAError):
    code = "GRAPH_ERROR"
    exit_status = 2


class CyclicInstantaneousGraph(GraphError):
    code = "CYCLIC_INSTANTANEOUS_GRAPH"

    def __init__(self, cycle):
        self.cycle = list(cycle)
        path = " -> ".join(self.cycle + self.cycle[:1])
        super().__init__(f"lag-0 subgraph contains a cycle: {path}")


class SelfEdgeAtLagZero(GraphError):
    code = "SELF_EDGE_AT_LAG_ZERO"


class UnknownNode(GraphError):
    code = "UNKNOWN_NODE"


class NotATree(GraphError):
    code = "NOT_A_TREE"


class FitError(LagRCAError):
    code = "FIT_ERROR"
    exit_status = 3


class InsufficientData(FitError):
    code = "INSUFFICIENT_DATA"


class MissingColumn(FitError):
    code = "MISSING_COLUMN"


class ZeroVariance(FitError):
    code = "ZERO_VARIANCE"


class MechanismError(LagRCAError):
    code = "MECHANISM_ERROR"
    exit_status = 4


class NotInvertible(MechanismError):
    code = "NOT_INVERTIBLE"


class MissingParentValue(MechanismError):
    code = "MISSING_PARENT_VALUE"


class MissingNoise(MechanismError):
    code = "MISSING_NOISE"


class MissingDanglingValue(MechanismError):
    code = "MISSING_DANGLING_VALUE"


class AttributionError(LagRCAError):
    code = "ATTRIBUTION_ERROR"
    exit_status = 5


class TooManyNodesForExact(AttributionError):
    code = "TOO_MANY_NODES_FOR_EXACT"


class NodeNotAttributable(AttributionError):
    code = "NODE_NOT_ATTRIBUTABLE"


class EmptyCorpus(AttributionError):
    code = "EMPTY_CORPUS"


class NoOvershootFound(AttributionError):
    code = "NO_OVERSHOOT_FOUND"


class PeakNotFound(AttributionError):
    code = "PEAK_NOT_FOUND"


class SimulationError(LagRCAError):
    code = "SIMULATION_ERROR"
    exit_status = 6


class InvalidConfig(SimulationError):
    code = "INVALID_CONFIG"


class MissingTraceFile(SimulationError):
    code = "MISSING_TRACE_FILE"


class UnknownInjectionKind(SimulationError):
    code = "UNKNOWN_INJECTION_KIND"


class PrefixDivergence(SimulationError):
    """Baseline and injected runs differ before the injection start."""

    code = "PREFIX_DIVERGENCE"


class IoFailure(LagRCAError):
    code = "IO_FAILURE"
    exit_status = 7


class InvalidManifest(LagRCAError):
    code = "INVALID_MANIFEST"
    exit_status = 8

"""Root-cause attribution for anomalies in time-lagged structural causal models."""

__version__ = "0.1.0"

from .attribution import AttributionResult, CoalitionEstimator, attribute, it_score, make_event, shapley_attributions  # noqa: E402
from .errors import LagRCAError  # noqa: E402
from .graph import SummaryGraph, TruncationMode, UnfoldedGraph, UnfoldedNode, load_graph, unfold  # noqa: E402
from .mechanisms import FittedSCM, MechanismPolicy, NoiseKind, default_policy, fit, propagate  # noqa: E402

__all__ = [
    "AttributionResult", "CoalitionEstimator", "FittedSCM", "LagRCAError", "MechanismPolicy", "NoiseKind",
    "SummaryGraph", "TruncationMode", "UnfoldedGraph", "UnfoldedNode", "__version__", "attribute", "default_policy",
    "fit", "it_score", "load_graph", "make_event", "propagate", "shapley_attributions", "unfold",
]

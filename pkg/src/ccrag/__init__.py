"""Causal knowledge graph construction and causal-counterfactual question answering."""

from .config import RunConfig, load_config
from .store import CausalGraph, Polarity, SourceRef

__all__ = ["CausalGraph", "Polarity", "RunConfig", "SourceRef", "load_config"]
__version__ = "0.1.0"

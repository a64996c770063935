"""Scene graph toolkit: relation proposals, attentional graph refinement, recall metrics."""

__version__ = "0.1.0"

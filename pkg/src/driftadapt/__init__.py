"""Test-time adaptation of a multimodal classifier via momentum-tracked
centroid alignment, sample-adaptive weighting, and intra-cluster diversity
regularization, with a synthetic semantic-drift benchmark."""

__version__ = "0.1.0"

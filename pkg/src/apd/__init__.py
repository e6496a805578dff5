"""Adversarial prompt defense toolkit.

Screens LLM input prompts through a three-stage analysis — a variational
autoencoder over pooled token embeddings, spectral features of a semantic
token graph, and a small transformer intent classifier — then attributes
and sanitizes the tokens driving an adversarial verdict.
"""

__version__ = "0.1.0"

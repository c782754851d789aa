"""Coreference-retention concept erasure toolkit for conditional diffusion
models: dataset model, LLM-backed coref/retain generation, embedding-space
analysis, certainty-weighted erasure training, judge-based evaluation, and
an expert curation service."""

__version__ = "0.1.0"

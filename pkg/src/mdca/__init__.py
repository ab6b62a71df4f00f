"""Hierarchical convolutional sparse coding with competing pathways."""

from .lca import LcaParams, energy, lca_step, solve_single_layer, threshold
from .network import (NetworkConfig, NetworkState, Pathway, Stimulation, TraceRecord,
                      compose_analyze, compose_synthesize, infer, mdca_step, reconstruct)
from .tensor import DictionaryLayer, GeometryError, analyze, synthesize

__all__ = [
    "DictionaryLayer", "GeometryError", "LcaParams", "NetworkConfig", "NetworkState", "Pathway",
    "Stimulation", "TraceRecord", "analyze", "compose_analyze", "compose_synthesize", "energy",
    "infer", "lca_step", "mdca_step", "reconstruct", "solve_single_layer", "synthesize", "threshold",
]

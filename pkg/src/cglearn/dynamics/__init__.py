"""Stochastic models over sparse term libraries: types, simulation, catalog and file formats."""

from .catalog import catalog_library, catalog_model
from .model import (CGForm, CoefficientModel, StateLayout, Term, TermLibrary, Topology, TrajectorySet,
                    evaluate_monomial, evaluate_terms, make_term, n_samples, ring_term, term_matrix)
from .simulate import random_initial, simulate

__all__ = [
    "CGForm", "CoefficientModel", "StateLayout", "Term", "TermLibrary", "Topology", "TrajectorySet",
    "catalog_library", "catalog_model", "evaluate_monomial", "evaluate_terms", "make_term", "n_samples",
    "random_initial", "ring_term", "simulate", "term_matrix",
]

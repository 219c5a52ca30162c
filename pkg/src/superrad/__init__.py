"""Cooperative emission from small emitter ensembles: simulation, time tags, and analysis."""

__version__ = "0.1.0"

"""Dataflow orchestration container: an Oz-like kernel interpreter with
durable partially-terminated processes, correlated message routing and
HTTP connectors."""

__version__ = "0.1.0"

"""Satellite-operator traffic identification and characterization toolkit."""

from . import bgp, catalog, filtering, ingest, metrics, profiling, starlink, synth, util

__version__ = "0.1.0"

__all__ = [
    "bgp",
    "catalog",
    "filtering",
    "ingest",
    "metrics",
    "profiling",
    "starlink",
    "synth",
    "util",
    "__version__",
]

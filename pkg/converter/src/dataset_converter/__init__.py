"""One-shot exporters for standard node-classification benchmarks.

Each supported dataset is fetched from its canonical distribution,
normalized (undirected, deduplicated, self-loop-free edges; raw feature
values), split 20-train-per-class / 1000-test where the source defines
no fixed split, and written as a single portable JSON document.
"""

from .export import DATASETS, ExporterError, ExportManifest, export

__all__ = ["export", "ExportManifest", "ExporterError", "DATASETS"]

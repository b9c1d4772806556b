"""Build the portable JSON document and its manifest.

The emitted format (shared contract with the training toolkit):
a single UTF-8 JSON object with ``num_nodes``, ``num_features``,
``num_classes``, ``edges`` ([u, v] with u < v), ``features`` (row-major
arrays of decimal floats), ``labels``, ``train_mask``, ``test_mask``
(0/1 arrays).  No NaN or Inf anywhere.  Feature values are exported raw;
any normalization belongs to the consumer.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .sources import ParsedGraph, SourceError, default_cache_dir, parse_npz, parse_planetoid

# published reference counts: (nodes, edges, features, classes, train, test)
PUBLISHED_TABLE = {
    "cora": (2708, 5429, 1433, 7, 140, 1000),
    "citeseer": (3327, 4732, 2703, 6, 120, 1000),
    "pubmed": (19717, 44338, 500, 3, 60, 1000),
    "coauthorcs": (18333, 81894, 6805, 15, 300, 1000),
    "amazonphoto": (7650, 119043, 745, 8, 160, 1000),
}

DATASETS = {
    "cora": ("planetoid", "cora"),
    "citeseer": ("planetoid", "citeseer"),
    "pubmed": ("planetoid", "pubmed"),
    "coauthorcs": ("npz", "coauthorcs"),
    "amazonphoto": ("npz", "amazonphoto"),
}

TRAIN_PER_CLASS = 20
TEST_SIZE = 1000


class ExporterError(Exception):
    """Wraps download/parse/validation failures with source detail."""


@dataclass
class ExportManifest:
    """What was written, with any mismatches against the published table."""

    dataset: str
    path: str
    num_nodes: int
    num_edges: int
    num_features: int
    num_classes: int
    train_size: int
    test_size: int
    seed: int
    split_source: str  # "fixed" or "seeded"
    checksum_sha256: str
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def summary(self) -> str:
        lines = [
            f"dataset       {self.dataset}",
            f"output        {self.path}",
            f"nodes         {self.num_nodes}",
            f"edges         {self.num_edges}",
            f"features      {self.num_features}",
            f"classes       {self.num_classes}",
            f"split         {self.train_size} train / {self.test_size} test ({self.split_source})",
            f"seed          {self.seed}",
            f"sha256        {self.checksum_sha256}",
        ]
        for note in self.notes:
            lines.append(f"note          {note}")
        return "\n".join(lines)


def seeded_split(labels: np.ndarray, num_classes: int, seed: int):
    """20 train nodes per class and up to 1000 test nodes, seed-deterministic."""
    rng = np.random.default_rng(seed)
    n = labels.shape[0]
    train_mask = np.zeros(n, dtype=bool)
    pool = []
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        if members.size < 2:
            raise ExporterError(f"class {c} too small to split")
        perm = rng.permutation(members)
        take = min(TRAIN_PER_CLASS, members.size - 1)
        train_mask[perm[:take]] = True
        pool.append(perm[take:])
    rest = rng.permutation(np.concatenate(pool))
    test_mask = np.zeros(n, dtype=bool)
    test_mask[rest[:TEST_SIZE]] = True
    return train_mask, test_mask


def _masks_from_parsed(parsed: ParsedGraph, num_classes: int, seed: int):
    if parsed.train_idx is not None and parsed.test_idx is not None:
        n = parsed.features.shape[0]
        train_mask = np.zeros(n, dtype=bool)
        train_mask[parsed.train_idx] = True
        test_mask = np.zeros(n, dtype=bool)
        test_mask[parsed.test_idx] = True
        return train_mask, test_mask, "fixed"
    train_mask, test_mask = seeded_split(parsed.labels, num_classes, seed)
    return train_mask, test_mask, "seeded"


def _document(parsed: ParsedGraph, train_mask, test_mask) -> dict:
    features = parsed.features
    if not np.all(np.isfinite(features)):
        raise ExporterError("source features contain NaN or Inf")
    return {
        "num_nodes": int(features.shape[0]),
        "num_features": int(features.shape[1]),
        "num_classes": int(parsed.labels.max()) + 1,
        "edges": parsed.edges.tolist(),
        "features": features.tolist(),
        "labels": parsed.labels.tolist(),
        "train_mask": train_mask.astype(int).tolist(),
        "test_mask": test_mask.astype(int).tolist(),
    }


def _verify_document(doc: dict) -> None:
    """Self-check of the emitted contract before anything touches disk."""
    n = doc["num_nodes"]
    edges = np.asarray(doc["edges"], dtype=np.int64).reshape(-1, 2)
    if edges.size:
        if edges.min() < 0 or edges.max() >= n:
            raise ExporterError("edge endpoint out of range")
        if np.any(edges[:, 0] >= edges[:, 1]):
            raise ExporterError("edges must satisfy u < v with no self-loops")
        keys = edges[:, 0] * n + edges[:, 1]
        if np.unique(keys).size != keys.size:
            raise ExporterError("duplicate edges in output")
    train = np.asarray(doc["train_mask"], dtype=bool)
    test = np.asarray(doc["test_mask"], dtype=bool)
    if np.any(train & test):
        raise ExporterError("train and test masks overlap")
    labels = np.asarray(doc["labels"])
    present = set(labels[train].tolist())
    missing = set(range(doc["num_classes"])) - present
    if missing:
        raise ExporterError(f"classes missing from the train split: {sorted(missing)}")


def _table_notes(name: str, doc: dict, train: int, test: int) -> list[str]:
    if name not in PUBLISHED_TABLE:
        return []
    nodes, edges, feats, classes, train_ref, test_ref = PUBLISHED_TABLE[name]
    notes = []
    observed = {
        "nodes": (doc["num_nodes"], nodes),
        "edges": (len(doc["edges"]), edges),
        "features": (doc["num_features"], feats),
        "classes": (doc["num_classes"], classes),
        "train": (train, train_ref),
        "test": (test, test_ref),
    }
    for key, (got, ref) in observed.items():
        if got != ref:
            notes.append(
                f"{key}: loaded source has {got}, published table lists {ref}"
            )
    return notes


def export(
    dataset_name: str, output_path: str, seed: int = 0, cache_dir: str | None = None
) -> ExportManifest:
    """Fetch, normalize, split, write, and summarize one benchmark."""
    name = dataset_name.lower().replace("-", "").replace("_", "")
    if name not in DATASETS:
        raise ExporterError(
            f"unknown dataset {dataset_name!r}; supported: {sorted(DATASETS)}"
        )
    family, source_name = DATASETS[name]
    cache = cache_dir or default_cache_dir()
    try:
        if family == "planetoid":
            parsed = parse_planetoid(source_name, cache)
        else:
            parsed = parse_npz(source_name, cache)
    except SourceError as exc:
        raise ExporterError(str(exc)) from exc

    num_classes = int(parsed.labels.max()) + 1
    train_mask, test_mask, split_source = _masks_from_parsed(parsed, num_classes, seed)
    doc = _document(parsed, train_mask, test_mask)
    _verify_document(doc)

    tmp = output_path + ".tmp"
    os.makedirs(os.path.dirname(output_path) or ".", exist_ok=True)
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, allow_nan=False, separators=(",", ":"))
    os.replace(tmp, output_path)

    digest = hashlib.sha256()
    with open(output_path, "rb") as fh:
        digest.update(fh.read())

    train_size = int(train_mask.sum())
    test_size = int(test_mask.sum())
    manifest = ExportManifest(
        dataset=name,
        path=output_path,
        num_nodes=doc["num_nodes"],
        num_edges=len(doc["edges"]),
        num_features=doc["num_features"],
        num_classes=doc["num_classes"],
        train_size=train_size,
        test_size=test_size,
        seed=seed,
        split_source=split_source,
        checksum_sha256=digest.hexdigest(),
        notes=parsed.notes + _table_notes(name, doc, train_size, test_size),
    )
    return manifest

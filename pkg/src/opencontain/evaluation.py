"""Batch evaluation over a labeled mesh corpus: accuracy, AUC, reports.

The containability score omega doubles as the classifier confidence, so AUC
uses the Mann-Whitney pairwise definition (ties count one half), which is
exact under the heavy tying at omega = 0 typical for non-containers.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .containability import imagine_containability
from .errors import (
    DuplicatePathError,
    ManifestError,
    MissingMeshError,
    OpenContainError,
    SingleClassError,
)
from .geometry import load_mesh


@dataclass(frozen=True)
class ManifestEntry:
    mesh_path: Path
    label: bool
    category: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a JSON array of {mesh, label, category?}; paths resolve relative
    to the manifest's directory and must exist."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise ManifestError(f"{path}: manifest must be a JSON array")
    entries = []
    seen = set()
    for k, row in enumerate(data):
        if not isinstance(row, dict) or "mesh" not in row or "label" not in row:
            raise ManifestError(
                f"{path}: entry {k} must be an object with mesh and label")
        if not isinstance(row["label"], bool):
            raise ManifestError(f"{path}: entry {k} label must be boolean")
        mesh = (path.parent / row["mesh"]).resolve()
        if mesh in seen:
            raise DuplicatePathError(f"{path}: duplicate mesh path {row['mesh']}")
        seen.add(mesh)
        if not mesh.is_file():
            raise MissingMeshError(f"{path}: entry {k} references missing "
                                   f"mesh file {mesh}")
        entries.append(ManifestEntry(mesh, row["label"],
                                     str(row.get("category", ""))))
    return DatasetManifest(tuple(entries))


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted half."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=bool).reshape(-1)
    if len(s) != len(y):
        raise ValueError("scores and labels must have equal length")
    pos = s[y]
    neg = s[~y]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClassError("AUC needs both a positive and a negative class")
    diff = pos[:, None] - neg[None, :]
    wins = np.count_nonzero(diff > 0)
    ties = np.count_nonzero(diff == 0)
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


@dataclass(frozen=True)
class EvalRow:
    mesh: str
    category: str
    label: bool
    omega: float
    predicted: bool
    n_in: int
    n_drop: int
    failed: bool = False
    error: str = ""


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[EvalRow, ...]
    accuracy: float
    auc: float
    true_pos: int
    false_pos: int
    true_neg: int
    false_neg: int
    runtime_seconds: float

    @property
    def n_correct(self) -> int:
        return self.true_pos + self.true_neg


def _eval_entry(entry: ManifestEntry, config: RunConfig) -> EvalRow:
    try:
        mesh = load_mesh(entry.mesh_path, scale=config.scale)
        result = imagine_containability(mesh, config)
        return EvalRow(mesh=entry.mesh_path.name, category=entry.category,
                       label=entry.label, omega=result.omega,
                       predicted=result.is_open_container,
                       n_in=result.n_in, n_drop=result.n_drop)
    except OpenContainError as exc:
        # a bad mesh scores zero and is flagged; the batch keeps going
        return EvalRow(mesh=entry.mesh_path.name, category=entry.category,
                       label=entry.label, omega=0.0, predicted=False,
                       n_in=0, n_drop=0, failed=True, error=str(exc))


def evaluate(manifest: DatasetManifest, config: RunConfig = RunConfig()) -> EvalReport:
    """Score every entry (config.jobs ways in parallel), then aggregate.

    Rows keep manifest order regardless of parallelism, so reruns and
    different job counts produce identical reports.
    """
    if len(manifest) == 0:
        raise ManifestError("manifest has no entries")
    start = time.perf_counter()
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            rows = tuple(pool.map(lambda e: _eval_entry(e, config),
                                  manifest.entries))
    else:
        rows = tuple(_eval_entry(e, config) for e in manifest.entries)
    labels = np.array([r.label for r in rows])
    preds = np.array([r.predicted for r in rows])
    omegas = np.array([r.omega for r in rows])
    tp = int(np.count_nonzero(preds & labels))
    fp = int(np.count_nonzero(preds & ~labels))
    tn = int(np.count_nonzero(~preds & ~labels))
    fn = int(np.count_nonzero(~preds & labels))
    accuracy = (tp + tn) / len(rows)
    auc = roc_auc(omegas, labels)
    return EvalReport(rows=rows, accuracy=accuracy, auc=auc,
                      true_pos=tp, false_pos=fp, true_neg=tn, false_neg=fn,
                      runtime_seconds=time.perf_counter() - start)

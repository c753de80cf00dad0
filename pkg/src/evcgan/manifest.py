"""Utterance manifests: tab-separated ``id``, ``emotion``, ``path`` rows."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Entry:
    uid: str
    emotion: str
    path: Path


def read_manifest(path, check_paths: bool = True) -> list:
    """Parse a manifest; relative audio paths resolve against its directory."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh, delimiter="\t"))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    for i, row in enumerate(rows, start=2):
        try:
            uid, emotion, audio = row["id"], row["emotion"], row["path"]
        except KeyError as exc:
            raise ManifestError(f"{path}: missing column {exc}") from exc
        if not uid or not emotion or not audio:
            raise ManifestError(f"{path}:{i}: empty field")
        entries.append(Entry(uid, emotion, (path.parent / audio).resolve()))
    ids = [e.uid for e in entries]
    if len(set(ids)) != len(ids):
        dup = sorted({u for u in ids if ids.count(u) > 1})
        raise ManifestError(f"{path}: duplicate utterance ids {dup}")
    labels = sorted({e.emotion for e in entries})
    if len(labels) != 2:
        raise ManifestError(f"{path}: a run needs exactly two emotion labels, found {labels}")
    if check_paths:
        missing = [str(e.path) for e in entries if not e.path.exists()]
        if missing:
            raise ManifestError(f"{path}: audio files not found: {missing[:3]}")
    return entries


def domain_labels(entries) -> tuple:
    """``(A, B)`` labels in sorted order."""
    a, b = sorted({e.emotion for e in entries})
    return a, b

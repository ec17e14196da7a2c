"""On-disk formats: binary feature dumps, prediction logs, selection reports, cycle records.

Feature dump layout (little-endian)::

    b"NCF1" | u32 version | u32 n_samples | u32 dim | f32[n_samples * dim] row-major

with a companion text index ``<path>.idx`` holding one ``sample_id,label`` line
per row (label -1 when unknown).
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .acquisition import AcquisitionResult, CheckpointPredictions
from .errors import BadMagic, FormatError, IndexMismatch, NonFiniteValue, TruncatedPayload
from .pool import FeatureMatrix

MAGIC = b"NCF1"
VERSION = 1
HEADER = struct.Struct("<4sIII")
PREDICTION_HEADER = "sample_id,epoch,predicted_class"


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def index_path(path) -> Path:
    return Path(f"{path}.idx")


def write_index(path, sample_ids: Iterable[int], labels: Iterable[int]) -> None:
    lines = "".join(f"{int(s)},{int(y)}\n" for s, y in zip(sample_ids, labels))
    _atomic_write(path, lines.encode("ascii"))


def read_index(path) -> tuple[np.ndarray, np.ndarray]:
    ids, labels = [], []
    with open(path, "r", encoding="ascii", newline="") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip("\n").split(",")
            if len(parts) != 2:
                raise IndexMismatch(f"{path}:{lineno}: expected 'sample_id,label'")
            try:
                ids.append(int(parts[0]))
                labels.append(int(parts[1]))
            except ValueError:
                raise IndexMismatch(f"{path}:{lineno}: non-integer field") from None
    if len(set(ids)) != len(ids):
        raise IndexMismatch(f"{path}: duplicate sample ids")
    return np.array(ids, dtype=np.int64), np.array(labels, dtype=np.int64)


def write_feature_dump(path, features: FeatureMatrix, labels=None) -> None:
    x = np.ascontiguousarray(features.features, dtype="<f4")
    if not np.all(np.isfinite(x)):
        raise FormatError("features overflow float32")
    n, d = x.shape
    _atomic_write(path, HEADER.pack(MAGIC, VERSION, n, d) + x.tobytes())
    if labels is None:
        labels = np.full(n, -1)
    write_index(index_path(path), features.sample_ids, labels)


def read_feature_dump(path) -> tuple[FeatureMatrix, np.ndarray]:
    """Validated (features, labels); labels are -1 where unknown."""
    raw = Path(path).read_bytes()
    if not MAGIC.startswith(raw[:4]) or (len(raw) >= 4 and raw[:4] != MAGIC):
        raise BadMagic(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < HEADER.size:
        raise TruncatedPayload(f"{path}: header truncated ({len(raw)} bytes)")
    _, version, n, d = HEADER.unpack_from(raw)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = HEADER.size + 4 * n * d
    if len(raw) < expected:
        raise TruncatedPayload(f"{path}: expected {expected} bytes, found {len(raw)}")
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes")
    x = np.frombuffer(raw, dtype="<f4", count=n * d, offset=HEADER.size).reshape(n, d)
    bad = ~np.isfinite(x)
    if bad.any():
        r, c = (int(v) for v in np.argwhere(bad)[0])
        raise NonFiniteValue(r, c, HEADER.size + 4 * (r * d + c))
    ids, labels = read_index(index_path(path))
    if len(ids) != n:
        raise IndexMismatch(f"{path}: index has {len(ids)} lines for {n} samples")
    return FeatureMatrix(x.astype(np.float32), ids), labels


def write_prediction_log(path, preds: CheckpointPredictions) -> None:
    lines = [PREDICTION_HEADER]
    order = np.argsort(preds.sample_ids, kind="stable")
    for i in order:
        sid = int(preds.sample_ids[i])
        for e, y in zip(preds.epochs.tolist(), preds.labels[i].tolist()):
            lines.append(f"{sid},{e},{y}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))


def read_prediction_log(path) -> CheckpointPredictions:
    with open(path, "r", encoding="ascii", newline="") as f:
        header = f.readline().rstrip("\n")
        if header != PREDICTION_HEADER:
            raise FormatError(f"{path}: expected header {PREDICTION_HEADER!r}")
        rows = []
        for lineno, line in enumerate(f, 2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 fields")
            try:
                rows.append(tuple(int(p) for p in parts))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-integer field") from None
    if rows != sorted(rows):
        raise FormatError(f"{path}: rows not sorted by (sample_id, epoch)")
    by_id: dict[int, list] = {}
    for sid, epoch, y in rows:
        by_id.setdefault(sid, []).append((epoch, y))
    if not by_id:
        raise FormatError(f"{path}: no predictions")
    epochs = None
    for sid, seq in by_id.items():
        e = [p[0] for p in seq]
        if epochs is None:
            epochs = e
        elif e != epochs:
            raise FormatError(f"{path}: sample {sid} has a different epoch sequence")
    ids = list(by_id)
    labels = np.array([[p[1] for p in by_id[s]] for s in ids], dtype=np.int64)
    return CheckpointPredictions(np.array(epochs), np.array(ids), labels)


def _summary(result: AcquisitionResult) -> dict:
    return {
        "n_candidates": len(result),
        "n_selected": int(result.selected.sum()),
        "cmap_raw_mean": float(result.cmap_raw.mean()),
        "cmap_raw_std": float(result.cmap_raw.std()),
        "ff_raw_mean": float(result.ff_raw.mean()),
        "ff_raw_max": int(result.ff_raw.max()),
        "score_max": float(result.score.max()),
        "score_min": float(result.score.min()),
    }


def make_report(result: AcquisitionResult, config: Mapping | None = None) -> dict:
    return {"config": dict(config or {}), "candidates": result.records(), "summary": _summary(result)}


def dumps_json(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def write_report(path, report: Mapping) -> None:
    _atomic_write(path, dumps_json(report).encode("ascii"))


def read_report(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="ascii"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: {e}") from None
    if not isinstance(doc, dict) or not {"config", "candidates", "summary"} <= set(doc):
        raise FormatError(f"{path}: missing config/candidates/summary")
    ranks = sorted(c["rank"] for c in doc["candidates"])
    if ranks != list(range(len(ranks))):
        raise FormatError(f"{path}: ranks are not a permutation")
    return doc


def report_result(report: Mapping) -> AcquisitionResult:
    return AcquisitionResult.from_records(report["candidates"])


def write_records(path, results: Mapping) -> None:
    """JSON lines, one per cycle, keyed by strategy and seed."""
    lines = []
    for (strategy, seed), records in results.items():
        for rec in records:
            lines.append(json.dumps({"strategy": strategy, "seed": seed, **rec.to_dict()}))
    _atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))


def read_records(path) -> dict:
    from .loop import CycleRecord

    out: dict = {}
    for line in Path(path).read_text(encoding="ascii").splitlines():
        d = json.loads(line)
        key = (d.pop("strategy"), d.pop("seed"))
        out.setdefault(key, []).append(CycleRecord.from_dict(d))
    return out

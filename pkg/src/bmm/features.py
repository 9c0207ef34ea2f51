"""Feature-set and manifest file formats.

Feature matrices are stored in one of two formats:

* ``binary`` -- magic ``BMMF``, little-endian ``u16`` version (currently 1),
  ``u64`` row count ``n``, ``u32`` feature dimension ``d``, then ``n*d``
  little-endian float32 values in row-major order, then two length-prefixed
  UTF-8 string blocks: the ``n`` sample ids followed by the ``n`` dataset
  labels (each string is a ``u32`` byte length plus payload).
* ``csv`` -- header ``sample_id,dataset_label,f0,...,f{d-1}`` followed by one
  data row per sample.

Manifests are UTF-8 text files: ``# key=value`` metadata lines followed by
one ``sample_id,dataset_label`` line per selected sample.

Readers reject invalid files instead of repairing them; the binary format is
endianness-pinned and read-then-write is byte identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

BINARY_MAGIC = b"BMMF"
BINARY_VERSION = 1


@dataclass(eq=False)
class FeatureMatrix:
    """n x d float32 feature vectors with per-row sample ids and dataset labels."""

    values: np.ndarray
    sample_ids: tuple[str, ...]
    dataset_labels: tuple[str, ...]

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        self.sample_ids = tuple(self.sample_ids)
        self.dataset_labels = tuple(self.dataset_labels)
        if self.values.ndim != 2:
            raise ValidationError(f"feature values must be 2-D, got shape {self.values.shape}")
        n, d = self.values.shape
        if n < 1 or d < 1:
            raise ValidationError(f"feature matrix must be at least 1x1, got {n}x{d}")
        if not np.isfinite(self.values).all():
            bad = int(np.flatnonzero(~np.isfinite(self.values).all(axis=1))[0])
            raise ValidationError(f"non-finite feature value in row {bad}")
        if len(self.sample_ids) != n or len(self.dataset_labels) != n:
            raise ValidationError(
                f"row count {n} does not match {len(self.sample_ids)} ids / "
                f"{len(self.dataset_labels)} labels"
            )
        if len(set(self.sample_ids)) != n:
            seen: set[str] = set()
            for sid in self.sample_ids:
                if sid in seen:
                    raise ValidationError(f"duplicate sample_id {sid!r}")
                seen.add(sid)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def row_index(self) -> dict[str, int]:
        """Map sample_id -> row number."""
        return {sid: i for i, sid in enumerate(self.sample_ids)}


@dataclass
class Manifest:
    """Ordered (sample_id, dataset_label) entries plus free-form metadata."""

    entries: list[tuple[str, str]] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.entries = [(str(s), str(l)) for s, l in self.entries]
        seen: set[str] = set()
        for sid, _ in self.entries:
            if sid in seen:
                raise ValidationError(f"duplicate sample_id {sid!r} in manifest")
            seen.add(sid)

    @classmethod
    def deduped(cls, entries, metadata=None) -> "Manifest":
        """Build a manifest keeping the first occurrence of each sample_id."""
        seen: set[str] = set()
        kept = []
        for sid, label in entries:
            if sid not in seen:
                seen.add(sid)
                kept.append((sid, label))
        return cls(entries=kept, metadata=dict(metadata or {}))


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"truncated file while reading {what}")
    return data


def _read_string_block(fh, n: int, what: str) -> list[str]:
    out = []
    for i in range(n):
        (length,) = struct.unpack("<I", _read_exact(fh, 4, f"{what} length {i}"))
        raw = _read_exact(fh, length, f"{what} {i}")
        try:
            out.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"{what} {i} is not valid UTF-8: {exc}") from exc
    return out


def read_features(path: str | Path, format: str = "binary") -> FeatureMatrix:
    """Read a feature matrix from `path` in the given format (binary or csv)."""
    if format == "binary":
        return _read_features_binary(path)
    if format == "csv":
        return _read_features_csv(path)
    raise FormatError(f"unknown feature format {format!r} (expected 'binary' or 'csv')")


def write_features(m: FeatureMatrix, path: str | Path, format: str = "binary") -> None:
    if format == "binary":
        _write_features_binary(m, path)
    elif format == "csv":
        _write_features_csv(m, path)
    else:
        raise FormatError(f"unknown feature format {format!r} (expected 'binary' or 'csv')")


def _read_features_binary(path: str | Path) -> FeatureMatrix:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != BINARY_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {BINARY_MAGIC!r}")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "version"))
        if version != BINARY_VERSION:
            raise FormatError(
                f"{path}: unsupported feature-file version {version} (this build reads {BINARY_VERSION})"
            )
        (n,) = struct.unpack("<Q", _read_exact(fh, 8, "row count"))
        (d,) = struct.unpack("<I", _read_exact(fh, 4, "dimension"))
        if n < 1 or d < 1:
            raise FormatError(f"{path}: invalid shape {n}x{d}")
        raw = _read_exact(fh, 4 * n * d, "feature values")
        values = np.frombuffer(raw, dtype="<f4").reshape(n, d)
        ids = _read_string_block(fh, n, "sample id")
        labels = _read_string_block(fh, n, "dataset label")
        trailing = fh.read(1)
        if trailing:
            raise FormatError(f"{path}: trailing bytes after string blocks")
    return FeatureMatrix(values=values.copy(), sample_ids=ids, dataset_labels=labels)


def _write_features_binary(m: FeatureMatrix, path: str | Path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(struct.pack("<HQI", BINARY_VERSION, m.n, m.d))
            fh.write(np.ascontiguousarray(m.values, dtype="<f4").tobytes())
            for block in (m.sample_ids, m.dataset_labels):
                for text in block:
                    raw = text.encode("utf-8")
                    fh.write(struct.pack("<I", len(raw)))
                    fh.write(raw)
    except OSError as exc:
        raise OSError(f"cannot write feature file {path}: {exc}") from exc


def _read_features_csv(path: str | Path) -> FeatureMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines:
        raise FormatError(f"{path}: empty CSV feature file")
    header = lines[0].split(",")
    if len(header) < 3:
        raise FormatError(f"{path}: CSV header needs at least 3 columns, got {len(header)}")
    d = len(header) - 2
    ids, labels, rows = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        cols = line.split(",")
        if len(cols) != d + 2:
            raise FormatError(f"{path}:{lineno}: expected {d + 2} columns, got {len(cols)}")
        ids.append(cols[0])
        labels.append(cols[1])
        try:
            rows.append([float(v) for v in cols[2:]])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: bad float: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: CSV file has a header but no data rows")
    return FeatureMatrix(
        values=np.asarray(rows, dtype=np.float32), sample_ids=ids, dataset_labels=labels
    )


def _csv_safe(text: str, what: str) -> str:
    if "," in text or "\n" in text or "\r" in text:
        raise ValidationError(f"{what} {text!r} may not contain commas or newlines")
    return text


def _write_features_csv(m: FeatureMatrix, path: str | Path) -> None:
    header = "sample_id,dataset_label," + ",".join(f"f{i}" for i in range(m.d))
    lines = [header]
    for i in range(m.n):
        sid = _csv_safe(m.sample_ids[i], "sample_id")
        label = _csv_safe(m.dataset_labels[i], "dataset_label")
        vals = ",".join(repr(float(v)) for v in m.values[i])
        lines.append(f"{sid},{label},{vals}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> Manifest:
    """Read a manifest; duplicate sample ids keep their first occurrence."""
    metadata: dict[str, str] = {}
    entries: list[tuple[str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:]
                if body.startswith(" "):
                    body = body[1:]
                if "=" not in body:
                    raise FormatError(f"{path}:{lineno}: metadata line without '=': {line!r}")
                key, value = body.split("=", 1)
                metadata[key] = value
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'sample_id,dataset_label'")
            entries.append((parts[0], parts[1]))
    return Manifest.deduped(entries, metadata)


def write_manifest(m: Manifest, path: str | Path) -> None:
    """Write a manifest; read_manifest(write_manifest(m)) == m, order preserved."""
    lines = []
    for key in sorted(m.metadata):
        value = m.metadata[key]
        if "=" in key or any(c in key + value for c in "\n\r"):
            raise ValidationError(f"metadata key {key!r} or its value is not representable")
        lines.append(f"# {key}={m.metadata[key]}")
    for sid, label in m.entries:
        lines.append(f"{_csv_safe(sid, 'sample_id')},{_csv_safe(label, 'dataset_label')}")
    try:
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write manifest {path}: {exc}") from exc

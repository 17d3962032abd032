"""Dataset files, CSV twins, and results emission.

Binary wire formats (little-endian):

  features:  "BNDLFEAT" | u32 version=1 | u64 n_samples | u32 dim
             | n*dim float32, row-major
  labels:    "BNDLLABL" | u32 version=1 | u64 n_samples | u32 n_classes
             | n u32 labels

Features are stored in 32-bit (what backbone extractors emit) and
widened to 64-bit on load.  Readers never read past declared lengths;
truncated or oversized files raise FormatError with the byte offset.

Every emitted result file starts with a metadata line (JSON object
under "_meta" for JSON-lines, a "# "-prefixed JSON comment for CSV)
carrying the resolved configuration, seed and tool version.
"""

import csv
import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, IngestionError, LabelError

FEATURE_MAGIC = b"BNDLFEAT"
LABEL_MAGIC = b"BNDLLABL"
FILE_VERSION = 1


@dataclass
class Dataset:
    features: np.ndarray  # (N, D) float64
    labels: np.ndarray    # (N,) int64
    n_classes: int

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


def make_dataset(features, labels, n_classes):
    features = np.ascontiguousarray(features, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if features.ndim != 2:
        raise IngestionError("features must be a 2-D array")
    if labels.shape != (features.shape[0],):
        raise IngestionError(
            f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = int(np.argmax((labels < 0) | (labels >= n_classes)))
        raise LabelError(
            f"label {labels[bad]} at row {bad} outside [0, {n_classes})"
        )
    return Dataset(features=features, labels=labels, n_classes=int(n_classes))


def write_features(path, features):
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise IngestionError("features must be a 2-D array")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IQI", FILE_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def write_labels(path, labels, n_classes):
    arr = np.ascontiguousarray(labels, dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(struct.pack("<IQI", FILE_VERSION, arr.shape[0], int(n_classes)))
        fh.write(arr.tobytes())


def _read_header(data, magic, path):
    if data[:8] != magic:
        raise FormatError(
            f"{path}: bad magic {data[:8]!r} at offset 0 (expected {magic!r})"
        )
    if len(data) < 24:
        raise FormatError(f"{path}: truncated header at offset {len(data)}")
    version, n, width = struct.unpack("<IQI", data[8:24])
    if version != FILE_VERSION:
        raise FormatError(
            f"{path}: unsupported version {version} at offset 8"
        )
    return n, width


def load_features(path):
    with open(path, "rb") as fh:
        data = fh.read()
    n, dim = _read_header(data, FEATURE_MAGIC, path)
    expected = n * dim * 4
    payload = data[24:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes at offset 24, "
            f"expected exactly {expected} (n_samples={n}, dim={dim})"
        )
    feats = np.frombuffer(payload, dtype="<f4").reshape(n, dim)
    bad = ~np.isfinite(feats)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise IngestionError(f"{path}: non-finite feature value at row {row}")
    return feats.astype(np.float64)


def load_labels(path):
    with open(path, "rb") as fh:
        data = fh.read()
    n, n_classes = _read_header(data, LABEL_MAGIC, path)
    expected = n * 4
    payload = data[24:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes at offset 24, "
            f"expected exactly {expected} (n_samples={n})"
        )
    labels = np.frombuffer(payload, dtype="<u4").astype(np.int64)
    too_big = labels >= n_classes
    if too_big.any():
        row = int(np.argmax(too_big))
        raise LabelError(
            f"{path}: label {labels[row]} at row {row} >= n_classes {n_classes}"
        )
    return labels, int(n_classes)


def load_dataset(features_path, labels_path):
    """Paired binary ingestion; counts must agree."""
    features = load_features(features_path)
    labels, n_classes = load_labels(labels_path)
    if labels.shape[0] != features.shape[0]:
        raise IngestionError(
            f"{features_path} has {features.shape[0]} rows but "
            f"{labels_path} has {labels.shape[0]}"
        )
    return make_dataset(features, labels, n_classes)


def write_dataset_csv(path, dataset):
    """CSV twin: header row f0..f{D-1},label; label in the final column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dataset.dim)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_dataset_csv(path, n_classes=None):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty CSV")
        width = len(header) - 1
        if width < 1:
            raise IngestionError(f"{path}: need at least one feature column")
        feats = []
        labels = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width + 1:
                raise IngestionError(
                    f"{path}: line {lineno} has {len(row)} fields, expected {width + 1}"
                )
            try:
                feats.append([float(v) for v in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError as exc:
                raise IngestionError(f"{path}: line {lineno}: {exc}")
    features = np.asarray(feats, dtype=np.float64)
    if features.size and not np.all(np.isfinite(features)):
        row = int(np.argwhere(~np.isfinite(features))[0][0])
        raise IngestionError(f"{path}: non-finite feature value at row {row}")
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 0
    return make_dataset(features, labels, n_classes)


def run_meta(config=None, seed=None, **extra):
    """Standard metadata dict embedded in every output artifact."""
    from . import __version__

    meta = {"tool": "bndl", "version": __version__}
    if seed is not None:
        meta["seed"] = seed
    if config is not None:
        meta["config"] = config
    meta.update(extra)
    return meta


def emit_jsonl(path, records, meta):
    """JSON-lines: a {"_meta": ...} line, then one object per record."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"_meta": meta}) + "\n")
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_jsonl(path):
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or "_meta" not in lines[0]:
        raise IngestionError(f"{path}: missing metadata line")
    return lines[0]["_meta"], lines[1:]


def emit_csv(path, header, rows, meta, float_fmt=None):
    """CSV with a leading '# {json}' metadata comment line.

    ``float_fmt`` (e.g. "%.9g") renders float cells; None keeps full
    repr precision.
    """
    def render(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return (float_fmt % v) if float_fmt else repr(v)
        return str(v)

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow([render(v) for v in row])
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(meta) + "\n")
        fh.write(buf.getvalue())

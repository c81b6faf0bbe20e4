"""Feature dumps, model files and heatmap export.

DCFD layout (little-endian throughout)::

    b"DCFD" | u32 format version | u64 manifest length | manifest (UTF-8 JSON) | payload

The manifest lists each layer as ``{name, n, p, dtype, offset, nbytes}``
with offsets relative to the payload start. Layers are row-major (n, p)
matrices of ``f32`` or ``f64``.
"""

import csv
import io
import json
import struct
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    BadMagicError,
    DimensionError,
    InvalidInputError,
    ManifestError,
    OffsetOverlapError,
    TruncatedPayloadError,
    VersionMismatchError,
)

MAGIC = b"DCFD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQ")
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def _dtype_tag(arr):
    if arr.dtype == np.float32:
        return "f32"
    if arr.dtype == np.float64:
        return "f64"
    raise InvalidInputError(f"layer dtype must be float32 or float64, got {arr.dtype}")


@dataclass
class FeatureDump:
    """Per-layer feature matrices for a common set of samples."""

    model_name: str
    layers: dict
    sample_ids: list
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        layers = {}
        for name, arr in self.layers.items():
            arr = np.asarray(arr)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(np.float64)
            if arr.ndim == 1:
                arr = arr.reshape(-1, 1)
            elif arr.ndim > 2:
                arr = arr.reshape(arr.shape[0], -1)
            layers[str(name)] = np.ascontiguousarray(arr)
        ns = {a.shape[0] for a in layers.values()}
        if len(ns) > 1:
            raise DimensionError(f"layers disagree on sample count: {sorted(ns)}")
        self.layers = layers
        self.sample_ids = list(self.sample_ids)
        if ns and len(self.sample_ids) != ns.pop():
            raise DimensionError("sample_ids length does not match layer sample count")

    @property
    def layer_names(self):
        return list(self.layers)

    @property
    def n(self):
        return len(self.sample_ids)

    def layer(self, name):
        try:
            return self.layers[name]
        except KeyError:
            raise InvalidInputError(
                f"no layer {name!r} in dump {self.model_name!r}; have {self.layer_names}"
            ) from None

    def equals(self, other):
        """Field-by-field equality, comparing payloads bit for bit."""
        if (self.model_name, self.sample_ids, self.extra, self.layer_names) != (
            other.model_name, other.sample_ids, other.extra, other.layer_names
        ):
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.layers.values(), other.layers.values())
        )


def encode_dump(dump):
    entries, chunks, offset = [], [], 0
    for name, arr in dump.layers.items():
        tag = _dtype_tag(arr)
        raw = arr.astype(_DTYPES[tag], copy=False).tobytes(order="C")
        entries.append({"name": name, "n": arr.shape[0], "p": arr.shape[1],
                        "dtype": tag, "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_name": dump.model_name,
        "layers": entries,
        "sample_ids": dump.sample_ids,
        "extra": dump.extra,
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, FORMAT_VERSION, len(blob)) + blob + b"".join(chunks)


def decode_dump(data):
    if len(data) < _HEADER.size or data[:4] != MAGIC:
        raise BadMagicError("not a DCFD file (bad magic)")
    _, version, mlen = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"DCFD version {version} not supported (expected {FORMAT_VERSION})")
    start = _HEADER.size + mlen
    if len(data) < start:
        raise TruncatedPayloadError("file ends inside the manifest")
    try:
        manifest = json.loads(data[_HEADER.size:start].decode("utf-8"))
        entries = manifest["layers"]
        model_name = manifest["model_name"]
        sample_ids = manifest["sample_ids"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ManifestError(f"unreadable manifest: {exc}") from exc
    if manifest.get("format_version") != version:
        raise VersionMismatchError("manifest version disagrees with header")
    payload = memoryview(data)[start:]
    spans = sorted((e["offset"], e["offset"] + e["nbytes"], e["name"]) for e in entries)
    for (s0, e0, n0), (s1, _, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise OffsetOverlapError(f"layers {n0!r} and {n1!r} overlap in the payload")
    layers = {}
    for e in entries:
        dtype = _DTYPES.get(e["dtype"])
        if dtype is None:
            raise ManifestError(f"layer {e['name']!r}: unknown dtype {e['dtype']!r}")
        if e["offset"] < 0 or e["nbytes"] != e["n"] * e["p"] * dtype.itemsize:
            raise ManifestError(f"layer {e['name']!r}: inconsistent size fields")
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise TruncatedPayloadError(
                f"payload truncated inside layer {e['name']!r} "
                f"(needs {end} bytes, have {len(payload)})",
                layer=e["name"],
            )
        arr = np.frombuffer(payload[e["offset"]:end], dtype=dtype).reshape(e["n"], e["p"])
        native = np.float32 if e["dtype"] == "f32" else np.float64
        layers[e["name"]] = arr.astype(native)
    try:
        return FeatureDump(model_name, layers, sample_ids, manifest.get("extra", {}))
    except DimensionError as exc:
        raise ManifestError(str(exc)) from exc


def write_dump(path, dump):
    Path(path).write_bytes(encode_dump(dump))


def read_dump(path):
    """Read a DCFD file; ``.csv`` files are read as one-layer dumps."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_csv_dump(path)
    return decode_dump(path.read_bytes())


def read_csv_dump(path, layer_name=None):
    """One-layer dump from a headerless numeric CSV (one sample per row)."""
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    name = layer_name or path.stem
    return FeatureDump(path.stem, {name: data}, list(range(data.shape[0])))


# --- model parameters -----------------------------------------------------


def save_params(path, params, **meta):
    """Store an :class:`~dcorlab.nn.MLPParams` as an ``.npz`` archive.

    Zip member timestamps are pinned so identical parameters give identical bytes.
    """
    arrays = {f"a{i}": a for i, a in enumerate(params.arrays())}
    info = {"activation": params.activation, "feature_tap": params.feature_tap,
            "n_arrays": len(arrays), **meta}
    members = {"meta": np.frombuffer(json.dumps(info, sort_keys=True).encode(), dtype=np.uint8),
               **arrays}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for key, arr in members.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{key}.npy", date_time=_ZIP_EPOCH), buf.getvalue())


def load_params(path):
    from .nn import MLPParams

    with np.load(path, allow_pickle=False) as z:
        info = json.loads(z["meta"].tobytes().decode())
        arrays = [z[f"a{i}"] for i in range(info["n_arrays"])]
    return MLPParams(arrays[0::2], arrays[1::2], info["activation"], info["feature_tap"])


# --- heatmaps -------------------------------------------------------------


def export_heatmap(hm, path, provenance=None):
    """Write ``<path>.csv`` (6 significant digits) and ``<path>.json`` (full precision)."""
    path = Path(path)
    csv_path = path.with_name(path.name + ".csv")
    json_path = path.with_name(path.name + ".json")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(hm.col_labels))
        for label, row in zip(hm.row_labels, hm.values):
            w.writerow([label] + [f"{v:#.6g}" for v in row])
    doc = {
        "row_labels": list(hm.row_labels),
        "col_labels": list(hm.col_labels),
        "n_samples": hm.n_samples,
        "values": [[float(v) for v in row] for row in hm.values],
    }
    if provenance is not None:
        doc["provenance"] = provenance
    json_path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return csv_path, json_path


def read_heatmap_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    cols = rows[0][1:]
    labels = [r[0] for r in rows[1:]]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return labels, cols, values

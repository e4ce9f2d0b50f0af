"""File formats: BXL1 tensors, model blobs, key=value configs, CSV.

BXL1 tensor layout (all little endian):
    magic   4 bytes  b"BXL1"
    version u16      currently 1
    ndim    u16
    dims    ndim * u64
    payload float64 * prod(dims)
    check   u64      FNV-1a 64-bit hash of the payload bytes

Model files are one JSON header line (kind and layer sizes) followed by the
raw float64 LE parameter blob in a fixed order. Labels travel as a
one-column CSV next to the inputs tensor. Configs are INI-style key=value
files with one section per command; unknown keys are rejected.
"""

import configparser
import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .models import LinearSoftmaxModel, MlpModel

MAGIC = b"BXL1"
VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


def fnv1a64(data):
    """FNV-1a 64-bit hash; the 'XXH-style' payload checksum of the format."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _U64
    return h


def write_tensor(path, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    payload = arr.tobytes()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HH", VERSION, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(payload)
        f.write(struct.pack("<Q", fnv1a64(payload)))


def read_tensor(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise ParameterError(f"{path}: not a BXL1 tensor file")
    version, ndim = struct.unpack_from("<HH", raw, 4)
    if version != VERSION:
        raise ParameterError(f"{path}: unsupported version {version}")
    dims = struct.unpack_from(f"<{ndim}Q", raw, 8)
    count = int(np.prod(dims)) if ndim else 1
    start = 8 + 8 * ndim
    end = start + 8 * count
    payload = raw[start:end]
    (check,) = struct.unpack_from("<Q", raw, end)
    if fnv1a64(payload) != check:
        raise ParameterError(f"{path}: payload checksum mismatch")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()


def write_labels(path, labels):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["label"])
        for lab in labels:
            writer.writerow([int(lab)])


def read_labels(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["label"]:
            raise ParameterError(f"{path}: expected a one-column 'label' CSV")
        return np.array([int(row[0]) for row in reader], dtype=np.int64)


def _model_header(model):
    if isinstance(model, LinearSoftmaxModel):
        return {"format": "boxl1-model", "version": 1, "kind": "linear",
                "sizes": [model.input_dim, model.num_classes]}
    if isinstance(model, MlpModel):
        sizes = [model.input_dim] + [W.shape[0] for W in model.weights]
        return {"format": "boxl1-model", "version": 1, "kind": "mlp", "sizes": sizes}
    raise ParameterError(f"cannot serialize model type {type(model).__name__}")


def _model_params(model):
    if isinstance(model, LinearSoftmaxModel):
        return [model.W, model.b]
    return [a for W, b in zip(model.weights, model.biases) for a in (W, b)]


def save_model(path, model):
    header = json.dumps(_model_header(model), sort_keys=True).encode() + b"\n"
    blob = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in _model_params(model))
    with open(path, "wb") as f:
        f.write(header)
        f.write(blob)


def load_model(path):
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        blob = f.read()
    if header.get("format") != "boxl1-model" or header.get("version") != 1:
        raise ParameterError(f"{path}: not a boxl1 model file")
    sizes = header["sizes"]
    flat = np.frombuffer(blob, dtype="<f8")
    params = []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = flat[offset : offset + fan_out * fan_in].reshape(fan_out, fan_in)
        offset += fan_out * fan_in
        b = flat[offset : offset + fan_out]
        offset += fan_out
        params.append((W.copy(), b.copy()))
    if offset != flat.size:
        raise ParameterError(f"{path}: parameter blob size mismatch")
    if header["kind"] == "linear":
        if len(params) != 1:
            raise ParameterError(f"{path}: linear model must have one layer")
        return LinearSoftmaxModel(*params[0])
    if header["kind"] == "mlp":
        return MlpModel([W for W, _ in params], [b for _, b in params])
    raise ParameterError(f"{path}: unknown model kind {header['kind']!r}")


def save_dataset(out_dir, name, data):
    out_dir = Path(out_dir)
    write_tensor(out_dir / f"{name}_inputs.bxl1", data.inputs)
    write_labels(out_dir / f"{name}_labels.csv", data.labels)


def load_dataset(inputs_path, labels_path, num_classes):
    from .models import LabeledDataset

    return LabeledDataset(
        inputs=read_tensor(inputs_path),
        labels=read_labels(labels_path),
        num_classes=num_classes,
    )


def parse_config(path, command, known_keys):
    """Read the [command] section of an INI config; reject unknown keys."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ParameterError(f"config file {path} not found or unreadable")
    if not parser.has_section(command):
        return {}
    out = {}
    for key, value in parser.items(command):
        if key not in known_keys:
            raise ParameterError(f"unknown config key {key!r} in [{command}]")
        out[key] = value
    return out


def write_resolved_config(out_dir, command, options):
    """Echo the fully resolved options; reruns need only this file."""
    parser = configparser.ConfigParser()
    parser[command] = {k: str(v) for k, v in sorted(options.items()) if v is not None}
    with open(Path(out_dir) / "resolved.cfg", "w") as f:
        parser.write(f)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)

"""Language-neutral tensor persistence.

Every tensor is stored as a two-file pair: a JSON manifest (shape, axis
names, scalar type, endianness, version) next to a raw little-endian
binary blob of row-major 32-bit floats, with complex values interleaved
real/imaginary.
"""

from __future__ import annotations

import json
import os

import numpy as np

FORMAT_VERSION = 1


def save_tensor(base_path, array, axes=None):
    """Write ``<base>.json`` + ``<base>.bin`` for a real or complex array."""
    array = np.asarray(array)
    complex_valued = np.iscomplexobj(array)
    if complex_valued:
        blob = np.empty(array.shape + (2,), dtype="<f4")
        blob[..., 0] = array.real
        blob[..., 1] = array.imag
    else:
        blob = np.ascontiguousarray(array, dtype="<f4")
    manifest = {
        "version": FORMAT_VERSION,
        "shape": list(array.shape),
        "axes": list(axes) if axes is not None else ["dim%d" % i for i in range(array.ndim)],
        "scalar_type": "complex" if complex_valued else "real",
        "dtype": "float32",
        "byte_order": "little",
        "order": "C",
    }
    base_path = str(base_path)
    with open(base_path + ".json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    blob.tofile(base_path + ".bin")


def load_tensor(base_path):
    """Read a tensor pair written by :func:`save_tensor`."""
    base_path = str(base_path)
    with open(base_path + ".json") as f:
        manifest = json.load(f)
    if manifest.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported tensor format version in {base_path}.json")
    shape = tuple(manifest["shape"])
    raw = np.fromfile(base_path + ".bin", dtype="<f4")
    if manifest["scalar_type"] == "complex":
        raw = raw.reshape(shape + (2,))
        return (raw[..., 0] + 1j * raw[..., 1]).astype(np.complex64)
    return raw.reshape(shape)


def save_state_dict(directory, state, axes=None):
    """Persist a mapping of named arrays (e.g. network parameters)."""
    os.makedirs(directory, exist_ok=True)
    index = []
    for name, value in state.items():
        arr = np.asarray(value.detach().cpu().numpy() if hasattr(value, "detach") else value)
        fname = name.replace("/", "_").replace(".", "_")
        save_tensor(os.path.join(directory, fname), arr)
        index.append({"name": name, "file": fname, "shape": list(arr.shape)})
    with open(os.path.join(directory, "index.json"), "w") as f:
        json.dump({"version": FORMAT_VERSION, "entries": index}, f, indent=1, sort_keys=True)


def load_state_dict(directory):
    """Load a mapping written by :func:`save_state_dict`."""
    with open(os.path.join(directory, "index.json")) as f:
        index = json.load(f)
    return {
        e["name"]: load_tensor(os.path.join(directory, e["file"]))
        for e in index["entries"]
    }

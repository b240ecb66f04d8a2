"""Datasets, IDX files, synthetic data, RNG streams and model/property persistence."""
from __future__ import annotations

import csv
import gzip
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class FormatError(ValueError):
    pass


def rng_stream(seed: int, label: str, *extra: int) -> np.random.Generator:
    """Independent generator keyed by (master seed, purpose label, extra ints)."""
    digest = hashlib.sha256(label.encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *words, *map(int, extra)]))


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    provenance: dict = field(default_factory=dict)
    n_classes: int | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise FormatError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise FormatError("dataset inputs must lie in [0, 1]")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1 if len(self.labels) else 0
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise FormatError("labels out of range")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.split, dict(self.provenance),
                       self.n_classes)

    def per_class(self, limit: int) -> "Dataset":
        """First ``limit`` samples of each class, kept in file order."""
        seen: dict = {}
        keep = []
        for i, c in enumerate(self.labels):
            if seen.get(c, 0) < limit:
                seen[c] = seen.get(c, 0) + 1
                keep.append(i)
        out = self.subset(np.array(keep, dtype=int))
        out.provenance["limit_per_class"] = limit
        return out


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, magic: int) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = got & 0xFF
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    count = int(np.prod(dims))
    payload = raw[4 + 4 * ndim:]
    if len(payload) < count:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {count} bytes)")
    return np.frombuffer(payload[:count], dtype=np.uint8).reshape(dims)


def write_idx(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.uint8)
    magic = 0x00000800 | arr.ndim
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_mnist_idx(images_path, labels_path, limit_per_class: int | None = None,
                   split: str = "train") -> Dataset:
    """Parse an IDX image/label pair, scale bytes by 1/255, keep the first k per class."""
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    ds = Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), split,
                 {"images": str(images_path), "labels": str(labels_path)}, n_classes=10)
    return ds.per_class(limit_per_class) if limit_per_class is not None else ds


def save_mnist_idx(ds: Dataset, images_path, labels_path) -> None:
    write_idx(images_path, np.rint(ds.inputs * 255.0))
    write_idx(labels_path, ds.labels)


BLOB_CENTERS = np.array([[0.25, 0.25], [0.75, 0.75]])


def gen_synthetic(kind: str = "blobs", n: int = 200, noise: float = 0.05, seed: int = 0,
                  split: str = "train") -> Dataset:
    """Two-class 2-D data in [0,1]^2; labels alternate 0,1,0,... (round robin)."""
    if n < 2:
        raise ValueError("need at least two samples")
    rng = rng_stream(seed, f"synthetic-{kind}-{split}")
    labels = np.arange(n) % 2
    if kind == "blobs":
        x = BLOB_CENTERS[labels] + noise * rng.standard_normal((n, 2))
    elif kind == "moons":
        t = rng.uniform(0, np.pi, n)
        upper = np.stack([np.cos(t), np.sin(t)], axis=1)
        lower = np.stack([1 - np.cos(t), 0.5 - np.sin(t)], axis=1)
        x = np.where(labels[:, None] == 0, upper, lower)
        x = (x + np.array([1.0, 0.75])) / np.array([4.0, 2.5])
        x = x + noise * rng.standard_normal((n, 2))
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    return Dataset(np.clip(x, 0.0, 1.0), labels, split,
                   {"kind": kind, "n": n, "noise": noise, "seed": seed}, n_classes=2)


def write_synthetic_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "label"])
        for (a, b), c in zip(ds.inputs, ds.labels):
            w.writerow([repr(float(a)), repr(float(b)), int(c)])


# -- model files ------------------------------------------------------------

def _layer_to_json(layer) -> dict:
    from .network import Affine, Conv2d, Flatten, ReLU
    if isinstance(layer, Affine):
        return {"kind": "affine", "w": layer.w.tolist(), "b": layer.b.tolist()}
    if isinstance(layer, Conv2d):
        return {"kind": "conv2d", "kernel": layer.kernel.tolist(), "bias": layer.bias.tolist(),
                "in_shape": list(layer.in_shape), "stride": layer.stride, "padding": layer.padding}
    if isinstance(layer, ReLU):
        return {"kind": "relu"}
    if isinstance(layer, Flatten):
        return {"kind": "flatten"}
    raise TypeError(f"cannot serialise {layer!r}")


def _require(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise FormatError(f"model schema: missing field {where}.{key}" if where else
                          f"model schema: missing field {key}")
    return d[key]


def _layer_from_json(d: dict, where: str):
    from .network import Affine, Conv2d, Flatten, ReLU
    kind = _require(d, "kind", where)
    try:
        if kind == "affine":
            w = np.array(_require(d, "w", where), dtype=np.float64)
            b = np.array(_require(d, "b", where), dtype=np.float64)
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise FormatError(f"model schema: {where} weight/bias shapes {w.shape}/{b.shape}")
            return Affine(w, b)
        if kind == "conv2d":
            return Conv2d(np.array(_require(d, "kernel", where), dtype=np.float64),
                          np.array(_require(d, "bias", where), dtype=np.float64),
                          tuple(_require(d, "in_shape", where)), int(d.get("stride", 1)),
                          int(d.get("padding", 0)))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"model schema: {where}: {exc}") from exc
    if kind == "relu":
        return ReLU()
    if kind == "flatten":
        return Flatten()
    raise FormatError(f"model schema: {where}.kind: unknown layer kind {kind!r}")


def model_to_json(net) -> dict:
    meta = {k: v for k, v in net.meta.items() if isinstance(v, (int, float, str, list))}
    meta["input_shape"] = list(net.input_shape)
    return {"layers": [_layer_to_json(l) for l in net.layers], "meta": meta}


def model_from_json(doc: dict):
    from .network import Network, ShapeError
    layers_doc = _require(doc, "layers", "")
    if not isinstance(layers_doc, list):
        raise FormatError("model schema: layers must be a list")
    meta = _require(doc, "meta", "")
    shape = _require(meta, "input_shape", "meta")
    layers = [_layer_from_json(d, f"layers[{i}]") for i, d in enumerate(layers_doc)]
    try:
        return Network(layers, tuple(shape), dict(meta))
    except ShapeError as exc:
        raise FormatError(f"model schema: {exc}") from exc


def save_model(net, path) -> None:
    # json writes floats with repr, which round-trips float64 exactly
    with open(path, "w") as fh:
        json.dump(model_to_json(net), fh)


def load_model(path):
    with open(path) as fh:
        return model_from_json(json.load(fh))


# -- property files ---------------------------------------------------------

def property_to_json(prop) -> dict:
    return {"x0": np.asarray(prop.x0).ravel().tolist(), "epsilon": prop.epsilon,
            "label": prop.label, "domain": list(prop.domain)}


def save_property(prop, path) -> None:
    with open(path, "w") as fh:
        json.dump(property_to_json(prop), fh)


def load_property(path, n_classes: int | None = None):
    from .bab import encode_property
    with open(path) as fh:
        d = json.load(fh)
    for key in ("x0", "epsilon", "label"):
        if key not in d:
            raise FormatError(f"property file: missing field {key}")
    return encode_property(np.array(d["x0"], dtype=float), float(d["epsilon"]), int(d["label"]),
                           tuple(d.get("domain", (0.0, 1.0))), n_classes)

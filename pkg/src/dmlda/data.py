"""Datasets, synthetic benchmark generation, feature files and checkpoints.

Feature text format::

    # n=<N> d=<D> [split=<train|test>]
    <label>,<v1>,...,<vD>

The header is optional on read. Values are written with ``repr`` so every
finite float64 survives a round trip unchanged. A binary variant (magic
``DMLFEAT\\0``) stores the same content as little-endian float64.

Checkpoints are a single binary file: magic, version, a list of
length-prefixed sections, and a trailing CRC32 over everything before it.
"""

import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .density import DensityState
from .errors import (CorruptCheckpoint, DimInconsistent, ParseError, SplitOverlap,
                     VersionMismatch)
from .model import AdamState, EmbeddingNet, Layer


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.features.ndim != 2:
            raise DimInconsistent(f"features must be 2-d, got shape {self.features.shape}")
        if len(self.labels) != len(self.features):
            raise DimInconsistent("features and labels differ in length")
        if self.split not in ("train", "test"):
            raise ValueError(f"unknown split {self.split!r}")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def classes(self):
        return [c.item() for c in np.unique(self.labels)]


def check_disjoint(train, test):
    shared = set(train.classes) & set(test.classes)
    if shared:
        raise SplitOverlap(f"train and test share {len(shared)} classes, e.g. {sorted(shared, key=str)[:3]}")


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 40
    samples_per_class: int = 30
    input_dim: int = 32
    sigma: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if min(self.num_classes, self.samples_per_class, self.input_dim) < 1:
            raise ValueError("class count, samples per class and dim must be positive")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes to form a train/test split")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def synthesize(cfg):
    """Gaussian blobs around random unit directions; returns ``(train, test)``.

    The first half of the classes (rounded up) goes to train, the rest to
    test. Features are deliberately left unnormalised.
    """
    rng = np.random.default_rng(cfg.seed)
    dirs = rng.standard_normal((cfg.num_classes, cfg.input_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    noise = rng.standard_normal((cfg.num_classes, cfg.samples_per_class, cfg.input_dim))
    x = dirs[:, None, :] + cfg.sigma * noise
    labels = np.repeat(np.arange(cfg.num_classes), cfg.samples_per_class)
    x = x.reshape(-1, cfg.input_dim)
    n_train = (cfg.num_classes + 1) // 2
    is_train = labels < n_train
    return (Dataset(x[is_train], labels[is_train], "train"),
            Dataset(x[~is_train], labels[~is_train], "test"))


# ---------------------------------------------------------------- features

FEATURE_MAGIC = b"DMLFEAT\0"
FEATURE_VERSION = 1


def _format_label(label):
    s = str(label)
    if "," in s or "\n" in s or s != s.strip() or not s:
        raise ValueError(f"label {label!r} cannot be written to a feature file")
    return s


def save_features(dataset, path, binary=False):
    path = Path(path)
    if binary:
        labels = json.dumps([c.item() if hasattr(c, "item") else c for c in dataset.labels]).encode()
        split = dataset.split.encode()
        with open(path, "wb") as fh:
            fh.write(FEATURE_MAGIC)
            fh.write(struct.pack("<IQQ", FEATURE_VERSION, len(dataset), dataset.dim))
            fh.write(struct.pack("<I", len(split)) + split)
            fh.write(struct.pack("<Q", len(labels)) + labels)
            fh.write(np.ascontiguousarray(dataset.features, dtype="<f8").tobytes())
        return path

    buf = io.StringIO()
    buf.write(f"# n={len(dataset)} d={dataset.dim} split={dataset.split}\n")
    for label, row in zip(dataset.labels, dataset.features):
        buf.write(_format_label(label.item() if hasattr(label, "item") else label))
        buf.write(",")
        buf.write(",".join(repr(v) for v in row.tolist()))
        buf.write("\n")
    path.write_text(buf.getvalue())
    return path


def _parse_header(line, lineno):
    fields = {}
    for tok in line.lstrip("#").split():
        if "=" not in tok:
            raise ParseError(f"malformed header token {tok!r}", lineno)
        k, v = tok.split("=", 1)
        fields[k] = v
    try:
        n = int(fields["n"]) if "n" in fields else None
        d = int(fields["d"]) if "d" in fields else None
    except ValueError:
        raise ParseError("header n/d must be integers", lineno) from None
    return n, d, fields.get("split")


def _coerce_labels(raw):
    try:
        return np.array([int(s) for s in raw], dtype=np.int64)
    except ValueError:
        return np.array(raw)


def _load_text(text, split):
    lines = text.splitlines()
    n_hdr = d_hdr = None
    raw_labels, rows = [], []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if rows or n_hdr is not None:
                continue  # comment
            n_hdr, d_hdr, hdr_split = _parse_header(stripped, lineno)
            split = split or hdr_split
            continue
        parts = [p.strip() for p in stripped.replace("−", "-").split(",")]
        if len(parts) < 2:
            raise ParseError("expected '<label>,<v1>,...'", lineno)
        try:
            vals = [float(p) for p in parts[1:]]
        except ValueError as exc:
            col = next(k for k, p in enumerate(parts[1:], start=1) if not _is_float(p))
            raise ParseError(f"bad number {parts[col]!r}", lineno, col) from exc
        if rows and len(vals) != len(rows[0]):
            raise DimInconsistent(f"line {lineno}: {len(vals)} values, expected {len(rows[0])}")
        if d_hdr is not None and len(vals) != d_hdr:
            raise DimInconsistent(f"line {lineno}: {len(vals)} values, header says d={d_hdr}")
        raw_labels.append(parts[0])
        rows.append(vals)
    if not rows:
        raise ParseError("no samples in feature file", len(lines) or 1)
    if n_hdr is not None and n_hdr != len(rows):
        raise ParseError(f"header says n={n_hdr} but file has {len(rows)} rows")
    feats = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(feats)):
        raise ParseError("non-finite value in feature file")
    return Dataset(feats, _coerce_labels(raw_labels), split or "train")


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def _load_binary(blob):
    try:
        off = len(FEATURE_MAGIC)
        version, n, d = struct.unpack_from("<IQQ", blob, off)
        off += struct.calcsize("<IQQ")
        if version != FEATURE_VERSION:
            raise VersionMismatch(f"feature file version {version}, expected {FEATURE_VERSION}")
        (slen,) = struct.unpack_from("<I", blob, off)
        off += 4
        split = blob[off:off + slen].decode()
        off += slen
        (llen,) = struct.unpack_from("<Q", blob, off)
        off += 8
        labels = json.loads(blob[off:off + llen].decode())
        off += llen
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"truncated or malformed binary header: {exc}") from None
    payload = blob[off:]
    if len(payload) != 8 * n * d:
        raise ParseError(f"payload holds {len(payload)} bytes, expected {8 * n * d}", offset=off)
    if len(labels) != n:
        raise DimInconsistent(f"{len(labels)} labels for {n} rows")
    feats = np.frombuffer(payload, dtype="<f8").reshape(n, d).astype(np.float64)
    return Dataset(feats, np.array(labels), split)


def load_features(path, split=None):
    blob = Path(path).read_bytes()
    if blob.startswith(FEATURE_MAGIC):
        ds = _load_binary(blob)
        if split is not None:
            ds.split = split
        return ds
    try:
        text = blob.decode()
    except UnicodeDecodeError as exc:
        raise ParseError("feature file is neither text nor the binary format",
                         offset=exc.start) from None
    return _load_text(text, split)


def load_split(train_path, test_path):
    """Load a train/test pair and enforce that their class sets are disjoint."""
    train = load_features(train_path, "train")
    test = load_features(test_path, "test")
    if train.dim != test.dim:
        raise DimInconsistent(f"train dim {train.dim} != test dim {test.dim}")
    check_disjoint(train, test)
    return train, test


# -------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"DMLDACKP"
CKPT_VERSION = 1
_KIND_F64, _KIND_TEXT = 0, 1


@dataclass
class Checkpoint:
    net: EmbeddingNet
    adam: AdamState
    density: DensityState
    config: dict = field(default_factory=dict)
    iteration: int = 0
    rng_state: dict = None
    version: int = CKPT_VERSION


def _pack_section(name, kind, payload, shape=()):
    name_b = name.encode()
    head = struct.pack("<H", len(name_b)) + name_b + struct.pack("<BB", kind, len(shape))
    head += b"".join(struct.pack("<Q", s) for s in shape)
    return head + struct.pack("<Q", len(payload)) + payload


def _array_section(name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return _pack_section(name, _KIND_F64, arr.tobytes(), arr.shape)


def save_checkpoint(ckpt, path):
    meta = {
        "iteration": int(ckpt.iteration),
        "config": ckpt.config,
        "activations": [l.activation for l in ckpt.net.layers],
        "adam": {"beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2,
                 "eps": ckpt.adam.eps, "t": ckpt.adam.t, "slots": len(ckpt.adam.m)},
        "density": {"classes": ckpt.density.classes, "eta": ckpt.density.eta,
                    "lam": ckpt.density.lam, "normalization": ckpt.density.normalization},
        "rng_state": ckpt.rng_state,
    }
    sections = [_pack_section("meta", _KIND_TEXT, json.dumps(meta).encode())]
    for k, layer in enumerate(ckpt.net.layers):
        sections.append(_array_section(f"layer{k}.weight", layer.weight))
        sections.append(_array_section(f"layer{k}.bias", layer.bias))
    for k, (m, v) in enumerate(zip(ckpt.adam.m, ckpt.adam.v)):
        sections.append(_array_section(f"adam.m{k}", m))
        sections.append(_array_section(f"adam.v{k}", v))
    sections.append(_array_section("density.alphas", ckpt.density.alphas))
    sections.append(_array_section("density.d0", ckpt.density.d0))

    body = CKPT_MAGIC + struct.pack("<II", ckpt.version, len(sections)) + b"".join(sections)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    return Path(path)


def _read_sections(blob):
    if not blob.startswith(CKPT_MAGIC):
        raise CorruptCheckpoint("missing checkpoint magic")
    if len(blob) < len(CKPT_MAGIC) + 12:
        raise CorruptCheckpoint("file too short")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    version, count = struct.unpack_from("<II", body, len(CKPT_MAGIC))
    if version != CKPT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CKPT_VERSION}")
    if zlib.crc32(body) != crc:
        raise CorruptCheckpoint("checksum mismatch (truncated or modified file)")
    off = len(CKPT_MAGIC) + 8
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + nlen].decode()
            off += nlen
            kind, ndim = struct.unpack_from("<BB", body, off)
            off += 2
            shape = struct.unpack_from("<" + "Q" * ndim, body, off)
            off += 8 * ndim
            (plen,) = struct.unpack_from("<Q", body, off)
            off += 8
            payload = body[off:off + plen]
            if len(payload) != plen:
                raise CorruptCheckpoint(f"section {name!r} is truncated")
            off += plen
            if kind == _KIND_TEXT:
                out[name] = payload.decode()
            elif kind == _KIND_F64:
                if plen != 8 * int(np.prod(shape, dtype=np.int64)):
                    raise CorruptCheckpoint(f"section {name!r} length does not match its shape")
                out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
            else:
                raise CorruptCheckpoint(f"unknown section kind {kind}")
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"malformed section table: {exc}") from None
    if off != len(body):
        raise CorruptCheckpoint("trailing bytes after the last section")
    return out


def load_checkpoint(path):
    sections = _read_sections(Path(path).read_bytes())
    try:
        meta = json.loads(sections["meta"])
        layers = [Layer(sections[f"layer{k}.weight"], sections[f"layer{k}.bias"], act)
                  for k, act in enumerate(meta["activations"])]
        net = EmbeddingNet(layers)
        am = meta["adam"]
        adam = AdamState(am["beta1"], am["beta2"], am["eps"], am["t"],
                         [sections[f"adam.m{k}"] for k in range(am["slots"])],
                         [sections[f"adam.v{k}"] for k in range(am["slots"])])
        dm = meta["density"]
        density = DensityState(dm["classes"], sections["density.alphas"], sections["density.d0"],
                               dm["eta"], dm["lam"], dm["normalization"])
    except (KeyError, json.JSONDecodeError, ValueError, TypeError) as exc:
        raise CorruptCheckpoint(f"inconsistent checkpoint content: {exc}") from None
    expected = net.parameters() + [density.alphas]
    if adam.m and [m.shape for m in adam.m] != [p.shape for p in expected]:
        raise CorruptCheckpoint("optimizer moments do not match the parameter shapes")
    return Checkpoint(net, adam, density, meta["config"], meta["iteration"],
                      meta["rng_state"], CKPT_VERSION)

"""Event streams, the N-MNIST AER codec and dataset slicing.

Events are held in numpy structured arrays with fields ``x``, ``y``, ``p``
(polarity index) and ``t`` (microseconds).
"""
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .rng import substream_seed

EVENT_DTYPE = np.dtype([("x", "<i4"), ("y", "<i4"), ("p", "<i4"), ("t", "<i8")])

NMNIST_SIZE = (34, 34)
MAX_TIMESTAMP = (1 << 23) - 1

_CACHE_MAGIC = b"MHEV"
_CACHE_VERSION = 1


class FormatError(ValueError):
    """Malformed AER data."""


class DatasetError(OSError):
    """Missing or malformed dataset directory."""


class Event(NamedTuple):
    x: int
    y: int
    p: int
    t: int


def make_events(x=(), y=(), p=(), t=()):
    n = len(t)
    ev = np.empty(n, dtype=EVENT_DTYPE)
    ev["x"], ev["y"], ev["p"], ev["t"] = x, y, p, t
    return ev


def as_events(items):
    """Structured event array from an iterable of ``(x, y, p, t)`` tuples."""
    return np.array([tuple(e) for e in items], dtype=EVENT_DTYPE)


@dataclass
class Recording:
    events: np.ndarray
    label: int | None = None
    width: int = NMNIST_SIZE[0]
    height: int = NMNIST_SIZE[1]
    n_polarities: int = 2
    uid: int = 0
    path: str | None = field(default=None, compare=False)

    def __post_init__(self):
        self.events = np.asarray(self.events, dtype=EVENT_DTYPE)
        if self.label is not None and not 0 <= self.label <= 9:
            raise ValueError(f"label must be a digit class, got {self.label}")

    def __len__(self):
        return len(self.events)

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.label == other.label
            and (self.width, self.height, self.n_polarities)
            == (other.width, other.height, other.n_polarities)
            and np.array_equal(self.events, other.events)
        )

    def validate(self):
        ev = self.events
        if len(ev):
            if ev["x"].min() < 0 or ev["x"].max() >= self.width:
                raise FormatError("x out of sensor range")
            if ev["y"].min() < 0 or ev["y"].max() >= self.height:
                raise FormatError("y out of sensor range")
            if ev["p"].min() < 0 or ev["p"].max() >= self.n_polarities:
                raise FormatError("polarity out of range")
            if np.any(np.diff(ev["t"]) < 0):
                raise FormatError("timestamps are not sorted")
        return self


def decode_nmnist(data, label=None, uid=0, path=None):
    """Decode N-MNIST 5-byte AER records.

    Byte 0 is x, byte 1 is y, bit 7 of byte 2 is polarity and the remaining
    23 bits (byte 2 low bits, byte 3, byte 4) are the timestamp in µs.
    Events are stably sorted by time.
    """
    data = bytes(data)
    if len(data) % 5:
        raise FormatError(f"truncated record: {len(data)} bytes is not a multiple of 5")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 5).astype(np.int64)
    x, y = raw[:, 0], raw[:, 1]
    if len(raw) and (x.max() >= NMNIST_SIZE[0] or y.max() >= NMNIST_SIZE[1]):
        bad = int(np.argmax((x >= NMNIST_SIZE[0]) | (y >= NMNIST_SIZE[1])))
        raise FormatError(
            f"record {bad}: (x={x[bad]}, y={y[bad]}) outside the 34x34 sensor"
        )
    p = raw[:, 2] >> 7
    t = ((raw[:, 2] & 0x7F) << 16) | (raw[:, 3] << 8) | raw[:, 4]
    ev = make_events(x, y, p, t)
    ev = ev[np.argsort(ev["t"], kind="stable")]
    return Recording(ev, label, *NMNIST_SIZE, 2, uid, path)


def encode_nmnist(rec):
    """Inverse of :func:`decode_nmnist`."""
    ev = rec.events
    if len(ev) == 0:
        return b""
    if ev["t"].min() < 0 or ev["t"].max() > MAX_TIMESTAMP:
        raise OverflowError("timestamps must fit in 23 bits")
    if ev["x"].min() < 0 or ev["x"].max() > 255 or ev["y"].min() < 0 or ev["y"].max() > 255:
        raise OverflowError("coordinates must fit in one byte")
    if ev["p"].min() < 0 or ev["p"].max() > 1:
        raise OverflowError("polarity must be 0 or 1")
    t = ev["t"].astype(np.int64)
    out = np.empty((len(ev), 5), dtype=np.uint8)
    out[:, 0] = ev["x"]
    out[:, 1] = ev["y"]
    out[:, 2] = (ev["p"] << 7) | (t >> 16)
    out[:, 3] = (t >> 8) & 0xFF
    out[:, 4] = t & 0xFF
    return out.tobytes()


def load_bin(path, label=None, uid=None):
    path = Path(path)
    if uid is None:
        uid = zlib.crc32(str(path).encode())
    return decode_nmnist(path.read_bytes(), label, uid, str(path))


def save_bin(rec, path):
    Path(path).write_bytes(encode_nmnist(rec))


def center_crop(rec, size=28):
    """Keep the centered ``size`` x ``size`` window and shift it to the origin."""
    ox = (rec.width - size) // 2
    oy = (rec.height - size) // 2
    if ox < 0 or oy < 0:
        raise ValueError(f"cannot crop {rec.width}x{rec.height} to {size}")
    ev = rec.events
    keep = (ev["x"] >= ox) & (ev["x"] < ox + size) & (ev["y"] >= oy) & (ev["y"] < oy + size)
    ev = ev[keep].copy()
    ev["x"] -= ox
    ev["y"] -= oy
    return replace(rec, events=ev, width=size, height=size)


# -- dataset slicing ----------------------------------------------------------

def _split_dir(root, split):
    root = Path(root)
    for name in (split, split.capitalize(), split.upper()):
        if (root / name).is_dir():
            return root / name
    raise DatasetError(f"no {split!r} directory under {root}")


@dataclass
class DatasetSlice:
    files: list
    labels: list
    split: str
    fraction: float
    seed: int
    root: str
    crop28: bool = False

    def __len__(self):
        return len(self.files)

    def load(self, index):
        f, label = self.files[index], self.labels[index]
        uid = zlib.crc32(f"{self.split}/{label}/{Path(f).name}".encode())
        rec = load_bin(f, label, uid)
        return center_crop(rec, 28) if self.crop28 else rec

    @property
    def recordings(self):
        return [self.load(i) for i in range(len(self))]

    def class_counts(self):
        return np.bincount(np.asarray(self.labels, dtype=int), minlength=10)


def sample_slice(root, split="train", fraction=1.0, seed=0, crop28=False, classes=range(10)):
    """Per-class uniform sample of ``.bin`` files, without replacement.

    Each class contributes ``round(fraction * n_files)`` files (at least one).
    The selection depends only on the directory listing and ``seed``.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    base = _split_dir(root, split)
    rng = np.random.default_rng(substream_seed(seed, f"dataset/{split}"))
    files, labels = [], []
    for label in classes:
        cdir = base / str(label)
        if not cdir.is_dir():
            raise DatasetError(f"missing class directory {cdir}")
        listing = sorted(cdir.glob("*.bin"))
        if not listing:
            raise DatasetError(f"class directory {cdir} holds no .bin files")
        n = len(listing) if fraction == 1 else max(1, int(round(fraction * len(listing))))
        picked = np.sort(rng.choice(len(listing), size=n, replace=False))
        files.extend(str(listing[i]) for i in picked)
        labels.extend([label] * n)
    return DatasetSlice(files, labels, split, fraction, seed, str(root), crop28)


# -- framed binary cache -------------------------------------------------------

_REC_HEADER = struct.Struct("<iIHHIQ")


def save_cache(recordings, path):
    """Write recordings to a versioned, framed binary file."""
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC + struct.pack("<II", _CACHE_VERSION, len(recordings)))
        for rec in recordings:
            label = -1 if rec.label is None else rec.label
            fh.write(_REC_HEADER.pack(label, rec.uid & 0xFFFFFFFF, rec.width, rec.height,
                                      rec.n_polarities, len(rec.events)))
            fh.write(np.ascontiguousarray(rec.events, dtype=EVENT_DTYPE).tobytes())


def load_cache(path):
    with open(path, "rb") as fh:
        head = fh.read(12)
        if head[:4] != _CACHE_MAGIC:
            raise FormatError(f"{path} is not an event cache")
        version, n = struct.unpack("<II", head[4:])
        if version != _CACHE_VERSION:
            raise FormatError(f"unsupported cache version {version}")
        out = []
        for _ in range(n):
            label, uid, w, h, npol, nev = _REC_HEADER.unpack(fh.read(_REC_HEADER.size))
            buf = fh.read(nev * EVENT_DTYPE.itemsize)
            if len(buf) != nev * EVENT_DTYPE.itemsize:
                raise FormatError("truncated cache")
            ev = np.frombuffer(buf, dtype=EVENT_DTYPE).copy()
            out.append(Recording(ev, None if label < 0 else label, w, h, npol, uid))
    return out

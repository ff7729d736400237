"""File formats: images, feature matrices, manifests and result streams.

Every writer goes through :func:`atomic_write`, so readers never observe a
partially written file.
"""
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import MissingInput, ValidationError

FEAT_MAGIC = b"FEAT1"
RESULT_VERSION = 1


def atomic_write(path, data):
    """Write ``bytes`` or ``str`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require(path):
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"missing file: {path}")
    return path


# ---------------------------------------------------------------- images


def encode_pgm(image, maxval=None):
    """Binary PGM (P5). 8-bit for ``maxval <= 255``, else 16-bit big-endian."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValidationError("PGM images must be 2-D")
    if maxval is None:
        maxval = 255 if img.dtype in (np.bool_, np.uint8) else 65535
    if img.dtype == np.bool_:
        img = img.astype(np.uint16) * maxval
    if img.min(initial=0) < 0 or img.max(initial=0) > maxval:
        raise ValidationError("pixel values outside [0, maxval]")
    h, w = img.shape
    dtype = ">u1" if maxval < 256 else ">u2"
    return f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + img.astype(dtype).tobytes()


def decode_pgm(data):
    """Parse a binary PGM; returns ``(array, maxval)``."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValidationError("not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    dtype = ">u1" if maxval < 256 else ">u2"
    count = w * h
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return arr.reshape(h, w).astype(np.uint16 if maxval >= 256 else np.uint8), maxval


def write_mask(path, mask):
    atomic_write(path, encode_pgm(np.asarray(mask, dtype=bool)))


def read_mask(path):
    path = _require(path)
    if path.suffix.lower() == ".png":
        return read_png(path) > 0
    arr, _ = decode_pgm(path.read_bytes())
    return arr > 0


def write_gray(path, gray):
    """Store a ``[0, 1]`` float frame as 16-bit PGM."""
    g = np.clip(np.asarray(gray, dtype=float), 0.0, 1.0)
    atomic_write(path, encode_pgm(np.round(g * 65535).astype(np.uint16), 65535))


def read_gray(path):
    """Read a gray frame as floats in ``[0, 1]`` (PGM or PNG)."""
    path = _require(path)
    if path.suffix.lower() == ".png":
        arr = read_png(path)
        return arr.astype(float) / (65535.0 if arr.dtype == np.uint16 else 255.0)
    arr, maxval = decode_pgm(path.read_bytes())
    return arr.astype(float) / maxval


def read_png(path):
    from PIL import Image
    with Image.open(_require(path)) as im:
        if im.mode not in ("L", "I;16", "I;16B", "1"):
            im = im.convert("L")
        return np.asarray(im)


def write_png(path, image):
    import io as _io

    from PIL import Image
    buf = _io.BytesIO()
    Image.fromarray(np.asarray(image)).save(buf, format="PNG")
    atomic_write(path, buf.getvalue())


# -------------------------------------------------------------- features


def encode_features(features):
    """``FEAT1`` container: magic, u32 frame count, u32 dim, then f32 rows (little-endian)."""
    f = np.asarray(features, dtype="<f4")
    if f.ndim != 2:
        raise ValidationError("features must be (frames, dim)")
    return FEAT_MAGIC + struct.pack("<II", *f.shape) + f.tobytes(order="C")


def decode_features(data):
    if data[:len(FEAT_MAGIC)] != FEAT_MAGIC:
        raise ValidationError("not a FEAT1 file")
    n, d = struct.unpack_from("<II", data, len(FEAT_MAGIC))
    off = len(FEAT_MAGIC) + 8
    if len(data) != off + 4 * n * d:
        raise ValidationError(f"FEAT1 payload size mismatch for {n}x{d}")
    return np.frombuffer(data, dtype="<f4", count=n * d, offset=off).reshape(n, d).astype(float)


def write_features(path, features):
    atomic_write(path, encode_features(features))


def read_features(path):
    """Read ``FEAT1`` or, for ``.csv`` files, one comma-separated row per frame."""
    path = _require(path)
    if path.suffix.lower() == ".csv":
        return np.loadtxt(path, delimiter=",", ndmin=2)
    return decode_features(path.read_bytes())


# -------------------------------------------------------------- manifest


@dataclass
class FrameEntry:
    index: int
    mask: str
    gray: str
    feature: str = None
    feature_row: int = None
    phase: int = None
    theta: float = None

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass
class Manifest:
    """Ordered frame list plus session metadata; paths are relative to ``root``."""
    frames: list
    meta: dict = field(default_factory=dict)
    root: Path = Path(".")

    def validate(self, check_files=True):
        idx = [f.index for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValidationError("manifest indices must be strictly increasing")
        if check_files:
            for f in self.frames:
                for p in (f.mask, f.gray, f.feature):
                    if p is not None:
                        _require(self.root / p)
        return self

    def to_json(self):
        return json.dumps({"meta": self.meta, "frames": [f.to_dict() for f in self.frames]},
                          indent=1, sort_keys=True) + "\n"

    def save(self, path):
        atomic_write(path, self.to_json())

    @classmethod
    def load(cls, path, check_files=True):
        path = _require(path)
        try:
            doc = json.loads(path.read_text())
            frames = [FrameEntry(**f) for f in doc["frames"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise ValidationError(f"bad manifest {path}: {exc}") from exc
        return cls(frames, doc.get("meta", {}), path.parent).validate(check_files)

    def bundles(self):
        """Yield ``FrameBundle`` objects, loading files lazily in order."""
        from ..synth import FrameBundle
        cache = {}
        for f in self.frames:
            feature = None
            if f.feature is not None:
                if f.feature not in cache:
                    cache.clear()
                    cache[f.feature] = read_features(self.root / f.feature)
                feats = cache[f.feature]
                feature = feats[f.feature_row if f.feature_row is not None else 0]
            yield FrameBundle(index=f.index, mask=read_mask(self.root / f.mask),
                              gray=read_gray(self.root / f.gray), feature=feature)

    def phases(self):
        return {f.index: f.phase for f in self.frames}


# --------------------------------------------------------------- results


def _finite(x):
    # JSON has no NaN; map non-finite floats to null
    if isinstance(x, float) and not np.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, np.generic):
        return _finite(x.item())
    return x


def result_line(record):
    return json.dumps(_finite(record), sort_keys=True, separators=(",", ":")) + "\n"


class ResultsWriter:
    """Collect FrameResult records and commit them as one JSONL file."""

    def __init__(self, path):
        self.path = Path(path)
        self.lines = []

    def __call__(self, result):
        rec = result.to_record() if hasattr(result, "to_record") else result
        self.lines.append(result_line(rec))

    def close(self):
        atomic_write(self.path, "".join(self.lines))


def read_results(path):
    recs = []
    for n, line in enumerate(_require(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("v") != RESULT_VERSION:
            raise ValidationError(f"{path}:{n}: unsupported result version {rec.get('v')}")
        recs.append(rec)
    return recs


def write_json(path, obj):
    atomic_write(path, json.dumps(_finite(obj), indent=1, sort_keys=True) + "\n")

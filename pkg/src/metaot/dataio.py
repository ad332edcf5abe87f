"""File formats: IDX, binary PGM/PPM, and the MOTK checkpoint container.

MOTK layout (all integers little-endian)::

    b"MOTK" | version u32 | kind: u16 length + utf-8
    | metadata: u32 length + utf-8 JSON
    | tensor count u32 | per tensor: name (u16 length + utf-8), ndim u32, dims u32 * ndim
    | payload length u64 | float32 payload | FNV-1a 64 checksum of the payload u64
"""
import gzip
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ChecksumError, FormatError, InvalidWeights, TruncatedError, VersionError

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
MOTK_MAGIC = b"MOTK"
MOTK_VERSION = 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _fnv1a_py(data):
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


if njit is not None:
    @njit(cache=True)
    def _fnv1a_nb(data):
        h = np.uint64(_FNV_OFFSET)
        prime = np.uint64(_FNV_PRIME)
        for i in range(data.size):
            h = (h ^ np.uint64(data[i])) * prime
        return h


def fnv1a64(data):
    """64-bit FNV-1a hash of a bytes-like object."""
    if njit is None or len(data) < 4096:
        return _fnv1a_py(bytes(data))
    return int(_fnv1a_nb(np.frombuffer(data, dtype=np.uint8)))


def _read_bytes(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise TruncatedError(f"corrupt gzip stream: {exc}") from exc
    return raw


# IDX

def parse_idx(raw):
    if len(raw) < 4:
        raise TruncatedError("IDX header is incomplete")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IDX_IMAGES, IDX_LABELS):
        raise FormatError(f"unsupported IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedError("IDX dimension table is incomplete")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = math.prod(dims)
    if len(raw) < header + count:
        raise TruncatedError(f"IDX payload has {len(raw) - header} of {count} bytes")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)
    if magic == IDX_LABELS:
        return data.copy()
    return data.astype(np.float64) / 255.0


def read_idx(path):
    """Images (magic 0x803) as floats in [0, 1]; labels (0x801) as uint8."""
    return parse_idx(_read_bytes(path))


def write_idx(path, array):
    array = np.asarray(array)
    if array.ndim == 1:
        magic = IDX_LABELS
    elif array.ndim == 3:
        magic = IDX_IMAGES
    else:
        raise FormatError("IDX writer supports labels (1-D) or image stacks (3-D)")
    if array.dtype != np.uint8:
        array = np.clip(np.rint(np.asarray(array, dtype=np.float64) * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


# PGM / PPM

@dataclass(frozen=True)
class DensityRaster:
    """Nonnegative grid; row 0 is the northern edge ``lat_max``."""

    grid: np.ndarray
    lat_min: float = -90.0
    lat_max: float = 90.0
    lon_min: float = -180.0
    lon_max: float = 180.0

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 2 or not np.all(np.isfinite(grid)) or np.any(grid < 0):
            raise InvalidWeights("raster must be a finite nonnegative 2-D grid")
        if not grid.any():
            raise InvalidWeights("raster has no positive cell")
        object.__setattr__(self, "grid", grid)


def _pnm_header(raw, expected):
    """Parse ``magic width height maxval`` allowing comments; returns (dims, maxval, offset)."""
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise TruncatedError("PNM header is incomplete")
        if raw[pos:pos + 1] == b"#":
            end = raw.find(b"\n", pos)
            if end < 0:
                raise TruncatedError("unterminated comment in PNM header")
            pos = end + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != expected:
        raise FormatError(f"expected {expected!r}, found {tokens[0][:8]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError("non-numeric PNM header field") from exc
    if width <= 0 or height <= 0:
        raise FormatError("PNM dimensions must be positive")
    if not 0 < maxval <= 65535:
        raise FormatError(f"maxval {maxval} outside 1..65535")
    if pos >= len(raw):
        raise TruncatedError("missing raster after PNM header")
    return (width, height), maxval, pos + 1


def _pnm_raster(raw, offset, count, maxval):
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = count * dtype.itemsize
    if len(raw) - offset < nbytes:
        raise TruncatedError(f"raster has {len(raw) - offset} of {nbytes} bytes")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).astype(np.float64)
    return data / maxval


def parse_pgm(raw):
    (w, h), maxval, offset = _pnm_header(raw, b"P5")
    return _pnm_raster(raw, offset, w * h, maxval).reshape(h, w)


def parse_ppm(raw):
    (w, h), maxval, offset = _pnm_header(raw, b"P6")
    return _pnm_raster(raw, offset, w * h * 3, maxval).reshape(h, w, 3)


def read_pgm(path, **extent):
    """Binary PGM as a DensityRaster scaled to [0, 1]."""
    return DensityRaster(parse_pgm(_read_bytes(path)), **extent)


def read_ppm(path):
    """Binary PPM as an (h, w, 3) float array in [0, 1]."""
    return parse_ppm(_read_bytes(path))


def write_pgm(path, grid, maxval=255):
    grid = np.clip(np.asarray(grid, dtype=np.float64), 0.0, 1.0)
    h, w = grid.shape
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(np.rint(grid * maxval).astype(dtype).tobytes())


def write_ppm(path, image):
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    h, w, ch = image.shape
    if ch != 3:
        raise FormatError("PPM needs three channels")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.rint(image * 255).astype(np.uint8).tobytes())


# Sampling

def latlon_to_unit(lat_deg, lon_deg):
    lat, lon = np.radians(lat_deg), np.radians(lon_deg)
    return np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1)


def sample_sphere(raster, n, rng):
    """Draw ``n`` unit vectors with density proportional to the raster per unit area.

    A cell is picked with probability ``value * area``; the point is then
    placed uniformly (by area) inside that cell. Returns ``(points, weights)``
    with uniform weights ``1 / n``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    grid = raster.grid
    h, w = grid.shape
    lat_edges = np.linspace(raster.lat_max, raster.lat_min, h + 1)
    sin_edges = np.sin(np.radians(lat_edges))
    row_area = np.abs(sin_edges[:-1] - sin_edges[1:])
    mass = grid * row_area[:, None]
    total = mass.sum()
    if total <= 0:
        raise InvalidWeights("raster has no positive mass")
    cells = rng.choice(h * w, size=n, p=(mass / total).ravel())
    rows, cols = np.divmod(cells, w)
    # uniform in sin(lat) is uniform in area within the band
    s = sin_edges[rows + 1] + rng.uniform(size=n) * (sin_edges[rows] - sin_edges[rows + 1])
    lat = np.degrees(np.arcsin(np.clip(s, -1.0, 1.0)))
    lon_step = (raster.lon_max - raster.lon_min) / w
    lon = raster.lon_min + (cols + rng.uniform(size=n)) * lon_step
    pts = latlon_to_unit(lat, lon)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return pts, np.full(n, 1.0 / n)


def image_to_color_samples(image, n, rng):
    """``n`` pixel colors drawn uniformly with replacement, scaled to [0, 1]."""
    image = np.asarray(image)
    pixels = image.reshape(-1, image.shape[-1])
    if image.dtype == np.uint8:
        pixels = pixels.astype(np.float64) / 255.0
    idx = rng.integers(0, len(pixels), size=n)
    return np.clip(np.asarray(pixels[idx], dtype=np.float64), 0.0, 1.0)


# Checkpoints

def save_arrays(path, kind, arrays, metadata=None, version=MOTK_VERSION):
    """Write named arrays as float32 with a kind tag and JSON metadata."""
    kind_b = kind.encode("utf-8")
    meta_b = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    parts = [MOTK_MAGIC, struct.pack("<I", version),
             struct.pack("<H", len(kind_b)), kind_b,
             struct.pack("<I", len(meta_b)), meta_b,
             struct.pack("<I", len(arrays))]
    payload = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        name_b = name.encode("utf-8")
        parts += [struct.pack("<H", len(name_b)), name_b,
                  struct.pack("<I", arr.ndim), struct.pack(f"<{arr.ndim}I", *arr.shape)]
        payload.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    payload = b"".join(payload)
    parts += [struct.pack("<Q", len(payload)), payload, struct.pack("<Q", fnv1a64(payload))]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, raw):
        self.raw, self.pos = raw, 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise TruncatedError("checkpoint ends early")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self, fmt):
        (length,) = self.unpack(fmt)
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("invalid utf-8 in checkpoint") from exc


def parse_arrays(raw):
    r = _Reader(raw)
    if r.take(4) != MOTK_MAGIC:
        raise FormatError("not a MOTK checkpoint")
    (version,) = r.unpack("<I")
    if version != MOTK_VERSION:
        raise VersionError(f"checkpoint version {version}, expected {MOTK_VERSION}")
    kind = r.text("<H")
    try:
        metadata = json.loads(r.text("<I"))
    except json.JSONDecodeError as exc:
        raise FormatError("checkpoint metadata is not valid JSON") from exc
    (count,) = r.unpack("<I")
    table = []
    for _ in range(count):
        name = r.text("<H")
        (ndim,) = r.unpack("<I")
        if ndim > 32:
            raise FormatError("implausible tensor rank")
        table.append((name, r.unpack(f"<{ndim}I")))
    (length,) = r.unpack("<Q")
    payload = r.take(length)
    (checksum,) = r.unpack("<Q")
    if fnv1a64(payload) != checksum:
        raise ChecksumError("payload checksum mismatch")
    expected = sum(4 * math.prod(shape) for _, shape in table)
    if expected != length:
        raise FormatError("shape table does not match payload length")
    arrays, offset = {}, 0
    for name, shape in table:
        size = math.prod(shape)
        arrays[name] = np.frombuffer(payload, dtype="<f4", count=size, offset=offset) \
            .astype(np.float32).reshape(shape)
        offset += 4 * size
    return kind, metadata, arrays


def load_arrays(path):
    with open(path, "rb") as fh:
        return parse_arrays(fh.read())


def save_checkpoint(path, model):
    from .checkpoint import to_arrays

    kind, metadata, arrays = to_arrays(model)
    save_arrays(path, kind, arrays, metadata)


def load_checkpoint(path):
    from .checkpoint import from_arrays

    return from_arrays(*load_arrays(path))

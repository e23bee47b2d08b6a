"""Bit-exact binary containers: image series and model checkpoints.

Image container, 32-byte header then payload then checksum:

    magic "CIM1" | u8 version=1 | u8 dtype | u16 reserved
    | u32 T, H, W (LE) | f32 pixel_intensity_scale | u8 snr_unit
    | 7 pad | payload row-major [t][h][w] | u64 FNV-1a(payload)

dtype 0 is complex64 with interleaved (re, im) pairs, dtype 1 is plain
float32. g-factor maps travel as dtype 1 with T=1; their scale field
carries the acceleration factor.

Checkpoint container, same spirit:

    magic "CIMC" | u8 version=1 | 3 pad | u32 config_len | config utf-8
    | u32 n_params
    | per param: u16 name_len | name | u8 ndim | u32 dims[ndim]
                 | u64 offset (in elements)
    | u64 buffer_len (elements) | buffer float32 LE | u64 FNV-1a(buffer)

Readers verify magic, version, and checksum; any mismatch raises
ChecksumError or ValueError rather than returning partial data.
"""

import struct

import numpy as np

from .models import ModelConfig, build_model
from .noise import ComplexImage, GFactorMap

CIM_MAGIC = b"CIM1"
CKPT_MAGIC = b"CIMC"

_HEADER = struct.Struct("<4sBBHIIIfB7x")
_DTYPE_COMPLEX64 = 0
_DTYPE_FLOAT32 = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


class ChecksumError(ValueError):
    """Stored checksum does not match the payload."""


def fnv1a(data) -> int:
    """64-bit FNV-1a over a bytes-like object."""
    h = _FNV_OFFSET
    for b in bytes(data):
        h = ((h ^ b) * _FNV_PRIME) & _U64
    return h


# ---------------------------------------------------------------
# image container
# ---------------------------------------------------------------

def _write_container(path, payload_bytes, dtype_code, shape, scale, snr_unit):
    t, h, w = shape
    header = _HEADER.pack(CIM_MAGIC, 1, dtype_code, 0, t, h, w,
                          float(scale), 1 if snr_unit else 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload_bytes)
        fh.write(struct.pack("<Q", fnv1a(payload_bytes)))


def _read_container(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size + 8:
        raise ValueError(f"file too short for a CIM container: {len(raw)} bytes")
    magic, version, code, _, t, h, w, scale, snr = _HEADER.unpack_from(raw, 0)
    if magic != CIM_MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {CIM_MAGIC!r}")
    if version != 1:
        raise ValueError(f"unsupported container version {version}")
    itemsize = {_DTYPE_COMPLEX64: 8, _DTYPE_FLOAT32: 4}.get(code)
    if itemsize is None:
        raise ValueError(f"unknown dtype code {code}")
    n = t * h * w
    expected = _HEADER.size + n * itemsize + 8
    if len(raw) != expected:
        raise ValueError(f"container size {len(raw)} != expected {expected}")
    payload = raw[_HEADER.size:_HEADER.size + n * itemsize]
    (stored,) = struct.unpack_from("<Q", raw, _HEADER.size + n * itemsize)
    actual = fnv1a(payload)
    if stored != actual:
        raise ChecksumError(
            f"payload checksum {actual:#018x} != stored {stored:#018x}")
    np_dtype = "<c8" if code == _DTYPE_COMPLEX64 else "<f4"
    data = np.frombuffer(payload, dtype=np_dtype).reshape(t, h, w)
    return code, data, scale, bool(snr)


def write_cim(path, img: ComplexImage):
    """Store an image series as complex64; lossless for f32-scale data."""
    data = np.ascontiguousarray(img.data.astype("<c8"))
    _write_container(path, data.tobytes(), _DTYPE_COMPLEX64, data.shape,
                     img.pixel_intensity_scale, img.snr_unit)


def read_cim(path) -> ComplexImage:
    code, data, scale, snr = _read_container(path)
    if code != _DTYPE_COMPLEX64:
        raise ValueError("container holds float32 data, not a complex image")
    return ComplexImage(data.copy(), pixel_intensity_scale=scale, snr_unit=snr)


def write_gfactor(path, g: GFactorMap):
    data = np.ascontiguousarray(g.values.astype("<f4"))[None, :, :]
    _write_container(path, data.tobytes(), _DTYPE_FLOAT32, data.shape,
                     float(g.acceleration), False)


def read_gfactor(path) -> GFactorMap:
    code, data, scale, _ = _read_container(path)
    if code != _DTYPE_FLOAT32:
        raise ValueError("container holds complex data, not a g-factor map")
    if data.shape[0] != 1:
        raise ValueError(f"g-factor container must have T=1, got {data.shape[0]}")
    return GFactorMap(data[0].astype(np.float64), int(round(scale)))


# ---------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------

def save_checkpoint(path, model):
    """Write config text plus all parameters as little-endian f32."""
    config = model.config.to_text().encode("utf-8")
    params = model.params()
    manifest = bytearray()
    chunks = []
    offset = 0
    for p in params:
        name = p.name.encode("utf-8")
        flat = np.ascontiguousarray(p.value.astype("<f4"))
        manifest += struct.pack("<H", len(name))
        manifest += name
        manifest += struct.pack("<B", p.value.ndim)
        manifest += struct.pack(f"<{p.value.ndim}I", *p.value.shape)
        manifest += struct.pack("<Q", offset)
        chunks.append(flat.tobytes())
        offset += flat.size
    buffer = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<B3x", 1))
        fh.write(struct.pack("<I", len(config)))
        fh.write(config)
        fh.write(struct.pack("<I", len(params)))
        fh.write(bytes(manifest))
        fh.write(struct.pack("<Q", offset))
        fh.write(buffer)
        fh.write(struct.pack("<Q", fnv1a(buffer)))


def load_checkpoint(path, dtype=np.float32):
    """Rebuild the model and fill every parameter from the buffer.

    Loading at float32 reproduces the stored bits exactly; any other
    dtype casts.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise ValueError("truncated checkpoint")
        out = raw[pos:pos + n]
        pos += n
        return out

    if take(4) != CKPT_MAGIC:
        raise ValueError("bad checkpoint magic")
    (version,) = struct.unpack("<B3x", take(4))
    if version != 1:
        raise ValueError(f"unsupported checkpoint version {version}")
    (config_len,) = struct.unpack("<I", take(4))
    config_text = take(config_len).decode("utf-8")
    (n_params,) = struct.unpack("<I", take(4))
    manifest = []
    for _ in range(n_params):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        (off,) = struct.unpack("<Q", take(8))
        manifest.append((name, shape, off))
    (buffer_len,) = struct.unpack("<Q", take(8))
    buffer_bytes = take(buffer_len * 4)
    (stored,) = struct.unpack("<Q", take(8))
    if pos != len(raw):
        raise ValueError(f"{len(raw) - pos} trailing bytes after checkpoint")
    actual = fnv1a(buffer_bytes)
    if stored != actual:
        raise ChecksumError(
            f"buffer checksum {actual:#018x} != stored {stored:#018x}")
    buffer = np.frombuffer(buffer_bytes, dtype="<f4")

    cfg = ModelConfig.from_text(config_text)
    model = build_model(cfg, seed=0, dtype=dtype)
    by_name = {p.name: p for p in model.params()}
    seen = set()
    for name, shape, off in manifest:
        p = by_name.get(name)
        if p is None:
            raise ValueError(f"checkpoint names unknown parameter {name!r}")
        if tuple(shape) != p.value.shape:
            raise ValueError(
                f"{name}: stored shape {shape} != built shape {p.value.shape}")
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if off + size > buffer.size:
            raise ValueError(f"{name}: manifest overruns buffer")
        p.value = buffer[off:off + size].reshape(shape).astype(dtype)
        seen.add(name)
    missing = set(by_name) - seen
    if missing:
        raise ValueError(f"checkpoint missing parameters: {sorted(missing)[:3]}...")
    return model

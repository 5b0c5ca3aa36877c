"""Minimal single-file NIfTI-1 reader and writer.

Reads little- and big-endian ``.nii`` files (optionally gzip-compressed,
detected from the stream's magic bytes) and writes little-endian ones.
Scalar volumes are 3-D; vector fields are 5-D with ``dim = (nx, ny, nz, 1, 3)``
and intent ``NIFTI_INTENT_VECTOR``. Orientation fields (qform/sform) are
carried through untouched; nothing is resampled.
"""

import gzip
import io
import math
import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    HeaderSizeError,
    InvalidFieldError,
    NiftiError,
    TruncatedDataError,
    UnsupportedDatatypeError,
    UnsupportedDimensionsError,
)
from .fields import SCALAR_KINDS, VECTOR_KINDS, Grid3, ScalarVolume, VectorField

HEADER_SIZE = 348
VOX_OFFSET = 352
INTENT_NONE = 0
INTENT_VECTOR = 1007

DATATYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
DATATYPE_CODES = {v: k for k, v in DATATYPES.items()}

ORIENTATION_KEYS = ("qform_code", "sform_code", "quatern", "qoffset", "srow_x", "srow_y", "srow_z")


def _is_gzip(raw):
    return raw[:2] == b"\x1f\x8b"


def _load_bytes(path):
    raw = Path(path).read_bytes()
    if _is_gzip(raw):
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError, gzip.BadGzipFile) as exc:
            raise TruncatedDataError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def _parse_header(raw):
    if len(raw) < HEADER_SIZE:
        raise TruncatedDataError(f"file holds {len(raw)} bytes, shorter than a NIfTI-1 header")
    # byte order from dim[0], which must lie in 1..7
    endian = None
    for e in ("<", ">"):
        if 1 <= struct.unpack_from(e + "h", raw, 40)[0] <= 7:
            endian = e
            break
    if endian is None:
        raise UnsupportedDimensionsError("dim[0] outside 1..7 in either byte order")
    sizeof_hdr = struct.unpack_from(endian + "i", raw, 0)[0]
    if sizeof_hdr != HEADER_SIZE:
        raise HeaderSizeError(f"sizeof_hdr is {sizeof_hdr}, expected {HEADER_SIZE}")
    magic = raw[344:348]
    if magic == b"ni1\x00":
        raise BadMagicError("two-file NIfTI (.hdr/.img) is not supported")
    if magic != b"n+1\x00":
        raise BadMagicError(f"bad NIfTI magic {magic!r}")

    hdr = {"endian": endian}
    hdr["dim"] = struct.unpack_from(endian + "8h", raw, 40)
    hdr["intent_code"] = struct.unpack_from(endian + "h", raw, 68)[0]
    hdr["datatype"] = struct.unpack_from(endian + "h", raw, 70)[0]
    hdr["bitpix"] = struct.unpack_from(endian + "h", raw, 72)[0]
    hdr["pixdim"] = struct.unpack_from(endian + "8f", raw, 76)
    hdr["vox_offset"] = struct.unpack_from(endian + "f", raw, 108)[0]
    hdr["scl_slope"], hdr["scl_inter"] = struct.unpack_from(endian + "2f", raw, 112)
    hdr["qform_code"], hdr["sform_code"] = struct.unpack_from(endian + "2h", raw, 252)
    q = struct.unpack_from(endian + "6f", raw, 256)
    hdr["quatern"], hdr["qoffset"] = list(q[:3]), list(q[3:])
    hdr["srow_x"] = list(struct.unpack_from(endian + "4f", raw, 280))
    hdr["srow_y"] = list(struct.unpack_from(endian + "4f", raw, 296))
    hdr["srow_z"] = list(struct.unpack_from(endian + "4f", raw, 312))
    hdr["descrip"] = raw[148:228].split(b"\x00", 1)[0].decode("ascii", "replace")
    return hdr


def _payload(raw, hdr, path):
    ndim = hdr["dim"][0]
    dims = tuple(int(d) for d in hdr["dim"][1:ndim + 1])
    if any(d < 1 for d in dims):
        raise UnsupportedDimensionsError(f"{path}: non-positive dimension in {dims}")
    code = hdr["datatype"]
    if code not in DATATYPES:
        raise UnsupportedDatatypeError(f"{path}: unsupported datatype code {code}")
    dtype = DATATYPES[code].newbyteorder(hdr["endian"])
    offset = hdr["vox_offset"]
    if not np.isfinite(offset) or offset < HEADER_SIZE or int(offset) != offset:
        raise NiftiError(f"{path}: invalid vox_offset {offset}")
    offset = int(offset)
    count = math.prod(dims)
    nbytes = count * dtype.itemsize
    if len(raw) < offset + nbytes:
        raise TruncatedDataError(
            f"{path}: payload needs {nbytes} bytes at offset {offset}, file has {len(raw)}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    # NIfTI stores x fastest
    data = data.reshape(dims, order="F")
    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if not np.isfinite(slope) or slope == 0:
        slope = 1.0
    if not np.isfinite(inter):
        inter = 0.0
    if slope != 1.0 or inter != 0.0:
        data = data.astype(np.float64) * slope + inter
    return data, dims, (slope, inter)


def _grid(hdr, dims):
    if len(dims) < 3:
        raise UnsupportedDimensionsError(f"expected at least 3 dimensions, got {dims}")
    spacing = [abs(float(s)) for s in hdr["pixdim"][1:4]]
    spacing = [s if np.isfinite(s) and s > 0 else 1.0 for s in spacing]
    try:
        return Grid3(dims[0], dims[1], dims[2], *spacing)
    except InvalidFieldError as exc:
        raise UnsupportedDimensionsError(str(exc)) from exc


def _orientation(hdr):
    return {k: hdr[k] for k in ORIENTATION_KEYS}


def read_header(path):
    """Parsed header fields of a NIfTI-1 file."""
    return _parse_header(_load_bytes(path))


def read_array(path):
    """Raw payload array with its header; used for 4-D feature stacks."""
    raw = _load_bytes(path)
    hdr = _parse_header(raw)
    data, _, _ = _payload(raw, hdr, path)
    return data, hdr


def read_volume(path, kind=None) -> ScalarVolume:
    """Read a 3-D NIfTI-1 volume.

    The kind is taken from ``kind``, else from the description field written
    by :func:`write_volume`, else integer files without scaling are labels
    and everything else is ``intensity``.
    """
    raw = _load_bytes(path)
    hdr = _parse_header(raw)
    data, dims, scaling = _payload(raw, hdr, path)
    while len(dims) > 3 and dims[-1] == 1:
        dims = dims[:-1]
    if len(dims) != 3:
        raise UnsupportedDimensionsError(f"{path}: expected a 3-D volume, got dims {dims}")
    data = data.reshape(dims, order="F")
    if kind is None and hdr["descrip"] in SCALAR_KINDS:
        kind = hdr["descrip"]
    if kind is None:
        integral = np.issubdtype(data.dtype, np.integer) and scaling == (1.0, 0.0)
        kind = "label" if integral and data.min() >= 0 else "intensity"
    return ScalarVolume(_grid(hdr, dims), np.array(data, dtype=np.float64), kind,
                        _orientation(hdr))


def read_field(path, kind=None) -> VectorField:
    """Read a 5-D vector field with components on the fifth axis.

    Without ``kind`` the description field decides, defaulting to
    ``transformation``.
    """
    raw = _load_bytes(path)
    hdr = _parse_header(raw)
    data, dims, _ = _payload(raw, hdr, path)
    if len(dims) != 5 or dims[3] != 1 or dims[4] != 3:
        raise UnsupportedDimensionsError(
            f"{path}: vector fields need dims (nx, ny, nz, 1, 3), got {dims}")
    if kind is None:
        kind = hdr["descrip"] if hdr["descrip"] in VECTOR_KINDS else "transformation"
    comps = np.moveaxis(np.asarray(data, dtype=np.float64)[:, :, :, 0, :], -1, 0)
    return VectorField(_grid(hdr, dims), comps, kind, _orientation(hdr))


def _header_bytes(dims, dtype, spacing, intent=INTENT_NONE, orientation=None, descrip=b""):
    buf = bytearray(VOX_OFFSET)
    struct.pack_into("<i", buf, 0, HEADER_SIZE)
    dim = [len(dims)] + list(dims) + [1] * (7 - len(dims))
    struct.pack_into("<8h", buf, 40, *dim)
    struct.pack_into("<h", buf, 68, intent)
    struct.pack_into("<2h", buf, 70, DATATYPE_CODES[dtype], dtype.itemsize * 8)
    pixdim = [1.0] + list(spacing) + [1.0] * 4
    struct.pack_into("<8f", buf, 76, *pixdim)
    struct.pack_into("<f", buf, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", buf, 112, 1.0, 0.0)
    struct.pack_into("<B", buf, 123, 2)  # xyzt_units: mm
    buf[148:148 + min(len(descrip), 79)] = descrip[:79]
    if orientation:
        o = orientation
        struct.pack_into("<2h", buf, 252, int(o["qform_code"]), int(o["sform_code"]))
        struct.pack_into("<6f", buf, 256, *o["quatern"], *o["qoffset"])
        struct.pack_into("<4f", buf, 280, *o["srow_x"])
        struct.pack_into("<4f", buf, 296, *o["srow_y"])
        struct.pack_into("<4f", buf, 312, *o["srow_z"])
    else:
        # scanner-less default: sform = diag(spacing)
        sx, sy, sz = spacing
        struct.pack_into("<2h", buf, 252, 0, 2)
        struct.pack_into("<4f", buf, 280, sx, 0.0, 0.0, 0.0)
        struct.pack_into("<4f", buf, 296, 0.0, sy, 0.0, 0.0)
        struct.pack_into("<4f", buf, 312, 0.0, 0.0, sz, 0.0)
    buf[344:348] = b"n+1\x00"
    return bytes(buf)


def _write(path, header, data):
    stream = io.BytesIO()
    stream.write(header)
    stream.write(np.asarray(data).astype(data.dtype.newbyteorder("<")).tobytes(order="F"))
    payload = stream.getvalue()
    path = Path(path)
    if path.suffix == ".gz":
        # mtime=0 keeps repeated writes byte-identical
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)


def write_array(path, data, spacing=(1.0, 1.0, 1.0), intent=INTENT_NONE, orientation=None,
                descrip=b""):
    data = np.asarray(data)
    if data.dtype not in DATATYPE_CODES:
        raise UnsupportedDatatypeError(f"cannot write dtype {data.dtype}")
    _write(path, _header_bytes(data.shape, data.dtype, spacing, intent, orientation, descrip), data)


def write_volume(vol: ScalarVolume, path, double=False):
    """Write a 3-D volume: labels as int32, others as float32 (float64 with ``double``)."""
    if vol.kind == "label":
        data = vol.data.astype(np.int32)
    else:
        data = vol.data.astype(np.float64 if double else np.float32)
    write_array(path, data, vol.grid.spacing, orientation=vol.orientation,
                descrip=vol.kind.encode())


def write_field(field: VectorField, path, double=False):
    """Write a vector field as 5-D ``(nx, ny, nz, 1, 3)`` data with vector intent."""
    data = np.moveaxis(field.data, 0, -1)[:, :, :, None, :]
    data = data.astype(np.float64 if double else np.float32)
    write_array(path, data, field.grid.spacing, INTENT_VECTOR, field.orientation,
                descrip=field.kind.encode())

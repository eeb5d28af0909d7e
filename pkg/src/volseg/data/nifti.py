"""Single-file NIfTI-1 reading and writing on top of ``struct`` and ``gzip``.

Only the features this pipeline needs are supported, and unsupported inputs
are rejected loudly rather than guessed at:

* single-file ``.nii`` / ``.nii.gz`` (magic ``n+1``), 3-d images;
* an affine given through the sform (``sform_code > 0``) whose rotation part
  is axis-aligned: each column must point along exactly one world axis, so
  oblique volumes raise :class:`~volseg.errors.NiftiFormatError`;
* integer and floating scalar dtypes, with ``scl_slope`` / ``scl_inter``
  applied on read.

The voxel-to-world convention follows the standard: world axes grow toward
Right, Anterior, Superior; column ``i`` of the sform matrix is the world
displacement of one step along voxel axis ``i``, which yields the
orientation code directly.
"""

from __future__ import annotations

import gzip
import struct

import numpy as np

from ..errors import NiftiFormatError
from .volume import LabelVolume, Volume, orientation_axes

__all__ = ["read_volume", "read_label", "write_volume", "write_label"]

_HEADER_SIZE = 348
_VOX_OFFSET = 352
_MAGIC_SINGLE = b"n+1\x00"

# NIfTI datatype code -> numpy dtype
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}

_OBLIQUE_TOL = 1e-6

# (world axis, positive direction?) -> orientation letter
_LETTERS = {(0, 1): "R", (0, -1): "L", (1, 1): "A", (1, -1): "P", (2, 1): "S", (2, -1): "I"}


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def _parse_header(buf: bytes, path):
    if len(buf) < _HEADER_SIZE:
        raise NiftiFormatError(f"'{path}': file shorter than a NIfTI-1 header")
    order = "<"
    (sizeof_hdr,) = struct.unpack_from("<i", buf, 0)
    if sizeof_hdr != _HEADER_SIZE:
        (sizeof_hdr,) = struct.unpack_from(">i", buf, 0)
        if sizeof_hdr != _HEADER_SIZE:
            raise NiftiFormatError(f"'{path}': sizeof_hdr is not 348; not NIfTI-1")
        order = ">"

    magic = buf[344:348]
    if magic != _MAGIC_SINGLE:
        raise NiftiFormatError(
            f"'{path}': magic {magic!r} is not the single-file NIfTI-1 magic"
        )

    dim = struct.unpack_from(f"{order}8h", buf, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NiftiFormatError(f"'{path}': invalid dim[0] = {ndim}")
    extents = dim[1 : 1 + ndim]
    if ndim > 3:
        if any(e != 1 for e in extents[3:]):
            raise NiftiFormatError(f"'{path}': only 3-d volumes supported, dims {extents}")
        extents = extents[:3]
    if len(extents) != 3 or any(e <= 0 for e in extents):
        raise NiftiFormatError(f"'{path}': expected three positive extents, got {extents}")

    (datatype,) = struct.unpack_from(f"{order}h", buf, 70)
    if datatype not in _DTYPES:
        raise NiftiFormatError(f"'{path}': unsupported datatype code {datatype}")

    (vox_offset,) = struct.unpack_from(f"{order}f", buf, 108)
    slope, inter = struct.unpack_from(f"{order}2f", buf, 112)
    (sform_code,) = struct.unpack_from(f"{order}h", buf, 254)
    if sform_code <= 0:
        raise NiftiFormatError(
            f"'{path}': sform_code is 0; an explicit spatial transform is required"
        )
    srow = np.array(
        [
            struct.unpack_from(f"{order}4f", buf, 280),
            struct.unpack_from(f"{order}4f", buf, 296),
            struct.unpack_from(f"{order}4f", buf, 312),
        ],
        dtype=np.float64,
    )
    return order, tuple(extents), datatype, int(vox_offset), slope, inter, srow


def _orientation_from_sform(srow: np.ndarray, path) -> tuple[str, tuple]:
    rotation = srow[:, :3]
    letters = []
    spacing = []
    used = set()
    for i in range(3):
        col = rotation[:, i]
        mags = np.abs(col)
        dom = int(np.argmax(mags))
        if mags[dom] <= 0:
            raise NiftiFormatError(f"'{path}': sform column {i} is zero")
        off_axis = np.delete(mags, dom)
        if np.any(off_axis > _OBLIQUE_TOL * mags[dom]):
            raise NiftiFormatError(
                f"'{path}': oblique orientation (sform column {i} = {col.tolist()}); "
                "reorient the volume with an external tool first"
            )
        if dom in used:
            raise NiftiFormatError(f"'{path}': sform maps two voxel axes onto one world axis")
        used.add(dom)
        letters.append(_LETTERS[(dom, 1 if col[dom] > 0 else -1)])
        spacing.append(float(mags[dom]))
    return "".join(letters), tuple(spacing)


def _read_array(path):
    buf = _read_bytes(path)
    order, extents, datatype, vox_offset, slope, inter, srow = _parse_header(buf, path)
    orientation, spacing = _orientation_from_sform(srow, path)
    dtype = np.dtype(_DTYPES[datatype]).newbyteorder(order)
    count = int(np.prod(extents))
    start = vox_offset if vox_offset >= _HEADER_SIZE else _VOX_OFFSET
    payload = buf[start : start + count * dtype.itemsize]
    data = np.frombuffer(payload, dtype=dtype)
    if data.size != count:
        raise NiftiFormatError(f"'{path}': truncated data section")
    data = data.astype(_DTYPES[datatype])
    # NIfTI stores arrays in Fortran order: first index varies fastest
    data = data.reshape(extents, order="F")
    return data, spacing, orientation, slope, inter


def read_volume(path) -> Volume:
    """Read a scalar image; applies ``scl_slope`` / ``scl_inter`` when set."""
    data, spacing, orientation, slope, inter = _read_array(path)
    data = data.astype(np.float32)
    if slope not in (0.0, 1.0) or inter != 0.0:
        effective = slope if slope != 0.0 else 1.0
        data = data * np.float32(effective) + np.float32(inter)
    return Volume(data, spacing, orientation)


def read_label(path) -> LabelVolume:
    """Read a label map; scaling fields must be neutral for labels."""
    data, spacing, orientation, slope, inter = _read_array(path)
    if slope not in (0.0, 1.0) or inter != 0.0:
        raise NiftiFormatError(f"'{path}': label file carries intensity scaling")
    return LabelVolume(data, spacing, orientation)


def _build_header(extents, spacing, orientation, datatype: int) -> bytearray:
    buf = bytearray(_VOX_OFFSET)
    struct.pack_into("<i", buf, 0, _HEADER_SIZE)
    struct.pack_into("<c", buf, 38, b"r")
    struct.pack_into("<8h", buf, 40, 3, *extents, 1, 1, 1, 1)
    struct.pack_into("<h", buf, 70, datatype)
    struct.pack_into("<h", buf, 72, np.dtype(_DTYPES[datatype]).itemsize * 8)
    struct.pack_into("<8f", buf, 76, 1.0, *spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", buf, 108, float(_VOX_OFFSET))
    struct.pack_into("<2f", buf, 112, 1.0, 0.0)
    struct.pack_into("<B", buf, 123, 2)  # spatial units: millimetres
    struct.pack_into("<2h", buf, 252, 0, 1)  # qform unused, sform "aligned"
    srow = np.zeros((3, 4), dtype=np.float64)
    for i, (world, sign) in enumerate(orientation_axes(orientation)):
        srow[world, i] = sign * spacing[i]
    struct.pack_into("<4f", buf, 280, *srow[0])
    struct.pack_into("<4f", buf, 296, *srow[1])
    struct.pack_into("<4f", buf, 312, *srow[2])
    buf[344:348] = _MAGIC_SINGLE
    return buf


def _write(path, data: np.ndarray, spacing, orientation) -> None:
    datatype = _DTYPE_CODES[data.dtype]
    buf = _build_header(data.shape, spacing, orientation, datatype)
    payload = bytes(buf) + data.tobytes(order="F")
    if str(path).endswith(".gz"):
        # fixed mtime and blank name keep identical volumes byte-identical
        with open(path, "wb") as fh:
            with gzip.GzipFile(filename="", fileobj=fh, mode="wb", mtime=0) as gz:
                gz.write(payload)
    else:
        with open(path, "wb") as fh:
            fh.write(payload)


def write_volume(path, volume: Volume) -> None:
    _write(path, volume.data.astype(np.float32), volume.spacing, volume.orientation)


def write_label(path, label: LabelVolume) -> None:
    _write(path, label.data.astype(np.uint8), label.spacing, label.orientation)

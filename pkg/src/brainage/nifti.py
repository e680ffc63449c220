"""Minimal NIfTI-1 reader/writer for uncompressed little-endian volumes.

Supports datatypes uint8 (2), int16 (4) and float32 (16) only; everything
is loaded as float32 after scl_slope/scl_inter scaling. NIfTI stores the
fastest-varying axis first (x), so header dims are the reverse of the
Volume3D (z, h, w) axis order.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError, InputOutputError, ValidationError
from .volume import Volume3D

HEADER_SIZE = 348
MAGIC = b"n+1\x00"
GZIP_MAGIC = b"\x1f\x8b"

# code -> numpy dtype, little-endian
_DTYPES = {2: "<u1", 4: "<i2", 16: "<f4"}
_FLOAT32_CODE = 16

# NIfTI-1 header, field offsets per the published C struct.
_HEADER_DTD = np.dtype(
    [
        ("sizeof_hdr", "<i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", "<i4"),
        ("session_error", "<i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", "<i2", (8,)),
        ("intent_p1", "<f4"),
        ("intent_p2", "<f4"),
        ("intent_p3", "<f4"),
        ("intent_code", "<i2"),
        ("datatype", "<i2"),
        ("bitpix", "<i2"),
        ("slice_start", "<i2"),
        ("pixdim", "<f4", (8,)),
        ("vox_offset", "<f4"),
        ("scl_slope", "<f4"),
        ("scl_inter", "<f4"),
        ("slice_end", "<i2"),
        ("slice_code", "u1"),
        ("xyzt_units", "u1"),
        ("cal_max", "<f4"),
        ("cal_min", "<f4"),
        ("slice_duration", "<f4"),
        ("toffset", "<f4"),
        ("glmax", "<i4"),
        ("glmin", "<i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", "<i2"),
        ("sform_code", "<i2"),
        ("quatern_b", "<f4"),
        ("quatern_c", "<f4"),
        ("quatern_d", "<f4"),
        ("qoffset_x", "<f4"),
        ("qoffset_y", "<f4"),
        ("qoffset_z", "<f4"),
        ("srow_x", "<f4", (4,)),
        ("srow_y", "<f4", (4,)),
        ("srow_z", "<f4", (4,)),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ]
)
assert _HEADER_DTD.itemsize == HEADER_SIZE


def read_nifti(path: str | os.PathLike) -> Volume3D:
    """Read an uncompressed little-endian NIfTI-1 file as a Volume3D.

    Values are mapped through scl_slope/scl_inter; slope 0 means the data
    is not scaled at all (NIfTI convention). Raises FormatError for bad
    magic, compressed input, unsupported datatype or truncation;
    ValidationError for non-finite values; InputOutputError if the file
    cannot be read.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InputOutputError(f"cannot read {path}: {exc}") from exc

    if raw[:2] == GZIP_MAGIC:
        raise FormatError(f"{path}: compressed input unsupported")
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")

    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=_HEADER_DTD)[0]
    if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
        raise FormatError(
            f"{path}: sizeof_hdr is {int(hdr['sizeof_hdr'])}, expected 348 "
            "(big-endian and NIfTI-2 files are unsupported)"
        )
    # numpy S4 scalars drop trailing NULs, so "n+1\0" reads back as "n+1"
    if bytes(hdr["magic"]) != MAGIC.rstrip(b"\x00"):
        raise FormatError(f"{path}: bad magic {bytes(hdr['magic'])!r}")

    code = int(hdr["datatype"])
    if code not in _DTYPES:
        raise FormatError(f"{path}: unsupported datatype code {code}")

    ndim = int(hdr["dim"][0])
    if ndim < 3 or ndim > 7:
        raise FormatError(f"{path}: dim[0] = {ndim}, need a 3-D volume")
    if any(int(d) != 1 for d in hdr["dim"][4 : ndim + 1]):
        raise ValidationError(f"{path}: volumes with a 4th dimension unsupported")
    nx, ny, nz = (int(d) for d in hdr["dim"][1:4])
    if min(nx, ny, nz) < 1:
        raise FormatError(f"{path}: non-positive dim {(nx, ny, nz)}")

    pix = [float(p) for p in hdr["pixdim"][1:4]]
    if any(p <= 0 for p in pix):
        raise ValidationError(f"{path}: non-positive pixdim {pix}")

    offset = int(hdr["vox_offset"])
    if offset < HEADER_SIZE:
        raise FormatError(f"{path}: vox_offset {offset} < 348")

    count = nx * ny * nz
    dtype = np.dtype(_DTYPES[code])
    end = offset + count * dtype.itemsize
    if len(raw) < end:
        raise FormatError(f"{path}: truncated data ({len(raw)} of {end} bytes)")

    flat = np.frombuffer(raw[offset:end], dtype=dtype)
    data = flat.reshape(nz, ny, nx).astype(np.float32)

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    if slope != 0.0 and not (slope == 1.0 and inter == 0.0):
        data = (data * np.float32(slope)) + np.float32(inter)

    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{path}: non-finite values in volume data")

    if int(hdr["qform_code"]) > 0:
        origin = (
            float(hdr["qoffset_z"]),
            float(hdr["qoffset_y"]),
            float(hdr["qoffset_x"]),
        )
    else:
        origin = (0.0, 0.0, 0.0)

    return Volume3D(
        dims=(nz, ny, nx),
        voxel_size=(pix[2], pix[1], pix[0]),
        origin_offset=origin,
        data=data,
    )


def write_nifti(volume: Volume3D, path: str | os.PathLike) -> None:
    """Write a Volume3D as float32 NIfTI-1 (slope 1, inter 0, offset 352)."""
    volume.validate()

    hdr = np.zeros((), dtype=_HEADER_DTD)
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    dims = volume.dims
    hdr["dim"][0] = 3
    hdr["dim"][1:4] = (dims[2], dims[1], dims[0])
    hdr["dim"][4:] = 1
    hdr["datatype"] = _FLOAT32_CODE
    hdr["bitpix"] = 32
    # pixdim[0] is the qfac; keep +1 for a right-handed grid
    hdr["pixdim"][0] = 1.0
    hdr["pixdim"][1:4] = (
        volume.voxel_size[2],
        volume.voxel_size[1],
        volume.voxel_size[0],
    )
    hdr["vox_offset"] = HEADER_SIZE + 4
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["descrip"] = b"brainage volume"
    hdr["qform_code"] = 1
    hdr["qoffset_x"] = volume.origin_offset[2]
    hdr["qoffset_y"] = volume.origin_offset[1]
    hdr["qoffset_z"] = volume.origin_offset[0]
    hdr["magic"] = MAGIC

    payload = np.ascontiguousarray(volume.data, dtype="<f4")
    try:
        with open(path, "wb") as fh:
            fh.write(hdr.tobytes())
            fh.write(b"\x00\x00\x00\x00")
            fh.write(payload.tobytes())
    except OSError as exc:
        raise InputOutputError(f"cannot write {path}: {exc}") from exc

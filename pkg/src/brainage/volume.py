"""Volumes on regular grids, rigid transforms and pull-resampling.

Axis order is (z, h, w) everywhere, matching the array layout. A voxel at
index i sits at world position (i - (dims - 1)/2) * voxel_size +
origin_offset, so volumes are centered on their origin_offset and target
grids are centered on the world origin.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import ValidationError

_INTERP_MODES = ("trilinear", "cubic_spline")


def _as_f32_triple(values, name: str) -> tuple[float, float, float]:
    arr = np.asarray(values, dtype="<f4")
    if arr.shape != (3,):
        raise ValidationError(f"{name} must have 3 components, got {arr.shape}")
    return (float(arr[0]), float(arr[1]), float(arr[2]))


@dataclass(frozen=True)
class Volume3D:
    """Dense float32 scalar field on a regular grid.

    Geometry (voxel_size, origin_offset) is stored at float32 precision so
    that NIfTI round trips are exact.
    """

    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float]
    origin_offset: tuple[float, float, float]
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(
            self, "voxel_size", _as_f32_triple(self.voxel_size, "voxel_size")
        )
        object.__setattr__(
            self,
            "origin_offset",
            _as_f32_triple(self.origin_offset, "origin_offset"),
        )
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim == 1:
            data = data.reshape(self.dims)
        object.__setattr__(self, "data", data)
        self.validate()

    def validate(self) -> None:
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ValidationError(f"dims must be 3 positive integers, got {self.dims}")
        if any(v <= 0 for v in self.voxel_size):
            raise ValidationError(f"voxel_size must be positive, got {self.voxel_size}")
        if self.data.shape != self.dims:
            raise ValidationError(
                f"data shape {self.data.shape} does not match dims {self.dims}"
            )
        if self.data.dtype != np.float32:
            raise ValidationError(f"data must be float32, got {self.data.dtype}")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("volume data contains non-finite values")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Volume3D):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.voxel_size == other.voxel_size
            and self.origin_offset == other.origin_offset
            and np.array_equal(
                self.data.view(np.uint32), other.data.view(np.uint32)
            )
        )


@dataclass(frozen=True)
class TargetGrid:
    """Output grid centered on the world origin."""

    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(
            self, "voxel_size", tuple(float(v) for v in self.voxel_size)
        )
        if any(d < 1 for d in self.dims):
            raise ValidationError(f"grid dims must be positive, got {self.dims}")
        if any(v <= 0 for v in self.voxel_size):
            raise ValidationError(
                f"grid voxel_size must be positive, got {self.voxel_size}"
            )


def _plane_rotation(i: int, j: int, degrees: float) -> np.ndarray:
    rad = np.deg2rad(float(degrees))
    c, s = np.cos(rad), np.sin(rad)
    rot = np.eye(3)
    rot[i, i] = c
    rot[i, j] = -s
    rot[j, i] = s
    rot[j, j] = c
    return rot


@dataclass(frozen=True)
class RigidTransform:
    """Rigid motion: Euler angles in degrees applied z then y then x, plus
    a translation in mm. Components are ordered (z, y, x) like the axes;
    a rotation "about z" turns the (h, w) plane.
    """

    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(
            self, "rotation", tuple(float(a) for a in self.rotation)
        )
        object.__setattr__(
            self, "translation", tuple(float(t) for t in self.translation)
        )
        if len(self.rotation) != 3 or len(self.translation) != 3:
            raise ValidationError("rotation and translation need 3 components each")

    def rotation_matrix(self) -> np.ndarray:
        rz, ry, rx = self.rotation
        # intrinsic z-y-x: world_point = Rz @ Ry @ Rx @ body_point
        mz = _plane_rotation(1, 2, rz)  # about axis 0, rotates (h, w)
        my = _plane_rotation(0, 2, ry)  # about axis 1, rotates (z, w)
        mx = _plane_rotation(0, 1, rx)  # about axis 2, rotates (z, h)
        return mz @ my @ mx

    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation_matrix()
        mat[:3, 3] = self.translation
        return mat

    def inverse_matrix(self) -> np.ndarray:
        rot = self.rotation_matrix()
        mat = np.eye(4)
        mat[:3, :3] = rot.T
        mat[:3, 3] = -rot.T @ np.asarray(self.translation)
        return mat


def _catmull_rom(t: np.ndarray) -> np.ndarray:
    # interpolating cubic: w(0)=1, w(1)=w(2)=0
    t = np.abs(t)
    near = (1.5 * t - 2.5) * t * t + 1.0
    far = ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _gather(data: np.ndarray, idx: list[np.ndarray]) -> np.ndarray:
    """Values at integer index triples, zero outside the array."""
    dims = data.shape
    valid = np.ones(idx[0].shape, dtype=bool)
    clipped = []
    for ax in range(3):
        valid &= (idx[ax] >= 0) & (idx[ax] < dims[ax])
        clipped.append(np.clip(idx[ax], 0, dims[ax] - 1))
    vals = data[clipped[0], clipped[1], clipped[2]]
    return np.where(valid, vals, 0.0)


def _interp_trilinear(data: np.ndarray, src: np.ndarray) -> np.ndarray:
    base = np.floor(src).astype(np.int64)
    frac = src - base
    acc = np.zeros(src.shape[1], dtype=np.float64)
    for corner in product((0, 1), repeat=3):
        wgt = np.ones(src.shape[1], dtype=np.float64)
        idx = []
        for ax, c in enumerate(corner):
            wgt *= frac[ax] if c else 1.0 - frac[ax]
            idx.append(base[ax] + c)
        acc += wgt * _gather(data, idx)
    return acc


def _interp_cubic(data: np.ndarray, src: np.ndarray) -> np.ndarray:
    base = np.floor(src).astype(np.int64)
    frac = src - base
    wgts = [
        [_catmull_rom(frac[ax] - off) for off in (-1, 0, 1, 2)] for ax in range(3)
    ]
    acc = np.zeros(src.shape[1], dtype=np.float64)
    for oz, oy, ox in product((-1, 0, 1, 2), repeat=3):
        wgt = wgts[0][oz + 1] * wgts[1][oy + 1] * wgts[2][ox + 1]
        idx = [base[0] + oz, base[1] + oy, base[2] + ox]
        acc += wgt * _gather(data, idx)
    return acc


def resample(
    volume: Volume3D,
    transform: RigidTransform,
    grid: TargetGrid,
    interpolation: str = "trilinear",
) -> Volume3D:
    """Pull-resample a volume onto a target grid under a rigid transform.

    Each output voxel at world position w takes the input value at the
    inverse-transformed position T^-1(w); samples outside the input
    footprint are zero. Trilinear output stays within the convex hull of
    the input values and zero; cubic (Catmull-Rom) may overshoot.
    """
    volume.validate()
    if interpolation not in _INTERP_MODES:
        raise ValidationError(
            f"unknown interpolation {interpolation!r}, expected one of {_INTERP_MODES}"
        )

    gdims = grid.dims
    axes = [np.arange(d, dtype=np.float64) for d in gdims]
    mesh = np.meshgrid(*axes, indexing="ij")
    out_idx = np.stack([m.ravel() for m in mesh])  # (3, M)

    gvs = np.asarray(grid.voxel_size, dtype=np.float64).reshape(3, 1)
    ghalf = (np.asarray(gdims, dtype=np.float64) - 1.0).reshape(3, 1) / 2.0
    vvs = np.asarray(volume.voxel_size, dtype=np.float64).reshape(3, 1)
    vhalf = (np.asarray(volume.dims, dtype=np.float64) - 1.0).reshape(3, 1) / 2.0
    origin = np.asarray(volume.origin_offset, dtype=np.float64).reshape(3, 1)
    trans = np.asarray(transform.translation, dtype=np.float64).reshape(3, 1)

    if transform.rotation == (0.0, 0.0, 0.0):
        # Axis-aligned case kept in exactly-cancelling form so that identity
        # resampling and grid centering land on the lattice bit-exactly.
        ratio = gvs / vvs
        shift = vhalf - ghalf * ratio - (trans + origin) / vvs
        src = out_idx * ratio + shift
    else:
        world = (out_idx - ghalf) * gvs
        inv = transform.inverse_matrix()
        pulled = inv[:3, :3] @ world + inv[:3, 3].reshape(3, 1)
        src = (pulled - origin) / vvs + vhalf

    interp = _interp_trilinear if interpolation == "trilinear" else _interp_cubic
    values = interp(volume.data, src)
    return Volume3D(
        dims=gdims,
        voxel_size=grid.voxel_size,
        origin_offset=(0.0, 0.0, 0.0),
        data=values.astype(np.float32).reshape(gdims),
    )


def to_canonical(
    volume: Volume3D, grid: TargetGrid, interpolation: str = "trilinear"
) -> Volume3D:
    """Center a volume on the target grid (identity rotation)."""
    shift = RigidTransform(
        rotation=(0.0, 0.0, 0.0),
        translation=tuple(-o for o in volume.origin_offset),
    )
    return resample(volume, shift, grid, interpolation)

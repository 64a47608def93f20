"""Pinhole camera model shared by reconstruction, stitching, and rendering.

Camera frame follows the computer-vision convention: +x right, +y down,
+z forward.  The pose maps camera to world, x_w = R x_c + c.  Pixel
(ix, iy) is sampled at its center (ix + 0.5, iy + 0.5); with cx = W/2 on
an odd-width image the middle pixel's ray is exactly the optical axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from relightkit.errors import FileFormatError, PreconditionError


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus a rigid camera-to-world pose."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation",
                           np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=np.float64))
        if self.width < 1 or self.height < 1:
            raise PreconditionError("image dimensions must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise PreconditionError("focal lengths must be positive")
        R = self.rotation
        if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-6) \
                or np.linalg.det(R) < 0:
            raise PreconditionError("pose rotation must be orthonormal "
                                    "with determinant +1")

    @property
    def projection(self) -> np.ndarray:
        """World-to-pixel 3x4 matrix K [R^T | -R^T c]."""
        K = np.array([[self.fx, 0.0, self.cx],
                      [0.0, self.fy, self.cy],
                      [0.0, 0.0, 1.0]])
        Rt = self.rotation.T
        return K @ np.hstack([Rt, (-Rt @ self.center)[:, None]])

    def pixel_rays(self) -> np.ndarray:
        """(H, W, 3) unit world-space directions through pixel centers."""
        ix = np.arange(self.width) + 0.5
        iy = np.arange(self.height) + 0.5
        xs = (ix - self.cx) / self.fx
        ys = (iy - self.cy) / self.fy
        d = np.empty((self.height, self.width, 3))
        d[..., 0] = xs[None, :]
        d[..., 1] = ys[:, None]
        d[..., 2] = 1.0
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return d @ self.rotation.T

    def project(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Project world points; returns ((n, 2) pixel coords, (n,) cam z).

        Points behind the camera have z <= 0; their pixel coords are not
        meaningful and the caller must mask on depth.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        cam = (pts - self.center) @ self.rotation
        z = cam[:, 2]
        safe = np.where(np.abs(z) > 1e-300, z, 1.0)
        uv = np.stack([self.fx * cam[:, 0] / safe + self.cx,
                       self.fy * cam[:, 1] / safe + self.cy], axis=1)
        return uv, z

    def to_row(self) -> np.ndarray:
        """Serialize as 13 numbers: W H fx fy cx cy tx ty tz qw qx qy qz."""
        q = Rotation.from_matrix(self.rotation).as_quat()   # x y z w
        return np.array([self.width, self.height, self.fx, self.fy,
                         self.cx, self.cy, *self.center,
                         q[3], q[0], q[1], q[2]])

    @staticmethod
    def from_row(row) -> "CameraModel":
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (13,):
            raise PreconditionError(f"camera row needs 13 values, got {row.shape}")
        qw, qx, qy, qz = row[9:13]
        R = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
        return CameraModel(int(row[0]), int(row[1]), float(row[2]),
                           float(row[3]), float(row[4]), float(row[5]),
                           rotation=R, center=row[6:9])


def look_at(center, target, up=(0.0, 0.0, 1.0), *, width, height, fx, fy,
            cx=None, cy=None) -> CameraModel:
    """Build a camera at `center` looking toward `target`."""
    center = np.asarray(center, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - center
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise PreconditionError("look_at target coincides with the center")
    forward = forward / norm
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        # Looking straight along up: pick an arbitrary stable right axis.
        right = np.cross(forward, [1.0, 0.0, 0.0])
        rn = np.linalg.norm(right)
    right = right / rn
    down = np.cross(forward, right)
    R = np.stack([right, down, forward], axis=1)
    if cx is None:
        cx = width / 2.0
    if cy is None:
        cy = height / 2.0
    return CameraModel(width, height, fx, fy, cx, cy, rotation=R,
                       center=center)


def load_cameras(path) -> list[CameraModel]:
    """Read cameras, one 13-number row per non-comment line."""
    cams = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 13:
                raise FileFormatError(
                    path, f"camera line needs 13 fields, got {len(parts)}",
                    line=lineno)
            try:
                row = np.array([float(p) for p in parts])
            except ValueError as exc:
                raise FileFormatError(path, f"bad number: {exc}",
                                      line=lineno) from None
            cams.append(CameraModel.from_row(row))
    if not cams:
        raise FileFormatError(path, "no cameras found")
    return cams


def save_cameras(path, cameras: list[CameraModel]) -> None:
    with open(path, "w") as fh:
        fh.write("# W H fx fy cx cy tx ty tz qw qx qy qz\n")
        for cam in cameras:
            row = cam.to_row()
            fh.write(f"{int(row[0])} {int(row[1])} "
                     + " ".join(f"{v:.17g}" for v in row[2:]) + "\n")

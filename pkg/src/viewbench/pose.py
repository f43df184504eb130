"""COLMAP extrinsics parsing and relative camera-rotation angles.

Rotations are 3x3 row-major numpy arrays mapping world to camera
coordinates, following the COLMAP convention. Quaternions use the Hamilton
(w, x, y, z) layout, also per COLMAP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ParseError, StructuralError

# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME
_POSE_FIELDS = 10


@dataclass(frozen=True)
class Quaternion:
    """Hamilton-convention unit-normalizable quaternion."""

    qw: float
    qx: float
    qy: float
    qz: float

    def norm(self) -> float:
        return math.sqrt(self.qw**2 + self.qx**2 + self.qy**2 + self.qz**2)

    def normalized(self) -> "Quaternion":
        n = self.norm()
        if not n > 0.0:
            raise DomainError("cannot normalize a zero-norm quaternion")
        return Quaternion(self.qw / n, self.qx / n, self.qy / n, self.qz / n)


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera extrinsics of one registered image."""

    image_id: int
    image_name: str
    rotation: np.ndarray
    translation: np.ndarray


@dataclass(frozen=True)
class RelativeAngle:
    """Rotation angle of one frame relative to the instance reference."""

    frame: int
    theta_deg: float


def quat_to_rotation(q: Quaternion) -> np.ndarray:
    """Rotation matrix of the normalized quaternion."""
    q = q.normalized()
    w, x, y, z = q.qw, q.qx, q.qy, q.qz
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def rotation_to_quat(rotation: np.ndarray) -> Quaternion:
    """Inverse of quat_to_rotation, canonicalized to qw >= 0.

    Uses the max-pivot (Shepperd) branch selection so the conversion stays
    stable for angles near 180 degrees.
    """
    m = np.asarray(rotation, dtype=np.float64)
    t = np.trace(m)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    return Quaternion(float(w), float(x), float(y), float(z)).normalized()


def axis_angle_rotation(axis: Sequence[float], theta_rad: float) -> np.ndarray:
    """Rodrigues rotation about a (non-zero) axis by theta_rad."""
    a = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(a)
    if not n > 0.0:
        raise DomainError("rotation axis must be non-zero")
    k = a / n
    kx, ky, kz = k
    cross = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return (
        np.eye(3)
        + math.sin(theta_rad) * cross
        + (1.0 - math.cos(theta_rad)) * (cross @ cross)
    )


def is_rotation_matrix(rotation: np.ndarray, tol: float = 1e-6) -> bool:
    """True when R is orthonormal with determinant +1 within tol."""
    m = np.asarray(rotation, dtype=np.float64)
    if m.shape != (3, 3):
        return False
    if not np.all(np.abs(m.T @ m - np.eye(3)) <= tol):
        return False
    return abs(np.linalg.det(m) - 1.0) <= tol


def relative_rotation(pose_i: CameraPose, pose_ref: CameraPose) -> np.ndarray:
    """Camera-to-camera rotation R_i @ R_ref^T, independent of world frame."""
    if np.array_equal(pose_i.rotation, pose_ref.rotation):
        # Exact identity keeps the self-distance exactly zero; the float
        # product R @ R.T can land a few ulp off the identity.
        return np.eye(3)
    return pose_i.rotation @ pose_ref.rotation.T


def angular_deviation(rel: np.ndarray) -> float:
    """Rotation angle in degrees, in [0, 180], from the matrix trace.

    The arccos argument is clamped to [-1, 1]; floating-point traces may
    exceed the bound by ~1e-15.
    """
    arg = (float(np.trace(rel)) - 1.0) / 2.0
    arg = min(1.0, max(-1.0, arg))
    return math.degrees(math.acos(arg))


def relative_angles(
    poses: Sequence[CameraPose], reference: CameraPose
) -> list[RelativeAngle]:
    """Angular deviation of every pose relative to the reference pose."""
    return [
        RelativeAngle(p.image_id, angular_deviation(relative_rotation(p, reference)))
        for p in poses
    ]


def parse_colmap_images(source: str | Iterable[str]) -> list[CameraPose]:
    """Parse the COLMAP images.txt text format into camera poses.

    Lines starting with '#' are comments. Each image contributes two lines;
    the first holds the pose fields, the second (2D point observations) is
    skipped. Quaternions are normalized before conversion and input order is
    preserved.
    """
    if isinstance(source, str):
        lines: Iterable[str] = source.splitlines()
    else:
        lines = source
    poses: list[CameraPose] = []
    seen_ids: set[int] = set()
    expect_points = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if expect_points:
            # points2D line, may legitimately be empty
            expect_points = False
            continue
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != _POSE_FIELDS:
            raise ParseError(
                f"line {lineno}: expected {_POSE_FIELDS} fields, got {len(fields)}"
            )
        try:
            image_id = int(fields[0])
            qw, qx, qy, qz = (float(v) for v in fields[1:5])
            tx, ty, tz = (float(v) for v in fields[5:8])
            int(fields[8])  # CAMERA_ID, validated but not stored
        except ValueError as exc:
            raise ParseError(f"line {lineno}: non-numeric field ({exc})") from exc
        if image_id in seen_ids:
            raise StructuralError(f"line {lineno}: duplicate IMAGE_ID {image_id}")
        seen_ids.add(image_id)
        rotation = quat_to_rotation(Quaternion(qw, qx, qy, qz))
        translation = np.array([tx, ty, tz], dtype=np.float64)
        poses.append(CameraPose(image_id, fields[9], rotation, translation))
        expect_points = True
    return poses


def format_colmap_images(poses: Sequence[CameraPose]) -> str:
    """Serialize poses back to the images.txt line format.

    Emits an empty points2D line per image so the output re-parses. The
    camera id is not part of CameraPose and is written as 1.
    """
    out = ["# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME"]
    for p in poses:
        q = rotation_to_quat(p.rotation)
        tx, ty, tz = (float(v) for v in p.translation)
        out.append(
            f"{p.image_id} {q.qw!r} {q.qx!r} {q.qy!r} {q.qz!r} "
            f"{tx!r} {ty!r} {tz!r} 1 {p.image_name}"
        )
        out.append("")
    return "\n".join(out) + "\n"

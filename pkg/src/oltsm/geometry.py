"""Coordinate-frame algebra for robot-centric landmark positioning.

Three frames appear throughout the package:

* camera ``C`` -- where object detections report 3D centers,
* body ``B`` -- the robot rigid body, related to the camera by fixed
  extrinsics ``p_B = R @ p_C + T``,
* magnetic ``M`` -- a heading-stable frame whose axes follow the local
  magnetic field; the body frame is rotated against it by the robot's
  yaw about the vertical axis.

Conventions (fixed here so every downstream value is deterministic):
yaw is a compass-style heading in degrees, increasing clockwise and
normalized to ``[0, 360)``; the magnetic x-axis points at magnetic
north with y 90 degrees to its left; z passes through the body/magnetic
rotation unchanged (planar-yaw model).  Angles are degrees at every
interface and radians internally.  All arithmetic is float64.

Because the magnetic axes do not rotate with the robot, the vector
between two static landmarks expressed in ``M`` is the same no matter
when or from where it was measured.  ``propagate_landmark`` exploits
that invariance to recover the body-frame position of a landmark that
left the field of view, given a second landmark seen at both times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: Tolerance for rotation-matrix orthonormality checks.
ORTHONORMAL_TOL = 1e-9


class InvalidExtrinsicsError(ValueError):
    """Camera-to-body extrinsics are not a proper rigid transform."""


@dataclass(frozen=True)
class Point3:
    """A 3D point in meters; the frame is tracked by the caller."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        for v in (self.x, self.y, self.z):
            if not math.isfinite(v):
                raise ValueError(f"Point3 components must be finite, got {(self.x, self.y, self.z)}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "Point3":
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (3,):
            raise ValueError(f"expected shape (3,), got {a.shape}")
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class Extrinsics:
    """Rigid camera-to-body transform ``p_B = R @ p_C + T``."""

    rotation: np.ndarray
    translation: Point3 = field(default=Point3(0.0, 0.0, 0.0))

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise InvalidExtrinsicsError(f"rotation must be 3x3, got {r.shape}")
        if not np.all(np.isfinite(r)):
            raise InvalidExtrinsicsError("rotation has non-finite entries")
        if np.max(np.abs(r @ r.T - np.eye(3))) > ORTHONORMAL_TOL:
            raise InvalidExtrinsicsError("rotation is not orthonormal to 1e-9")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
            raise InvalidExtrinsicsError("rotation determinant is not +1")
        r = r.copy()
        r.setflags(write=False)
        object.__setattr__(self, "rotation", r)

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(3), Point3(0.0, 0.0, 0.0))

    def inverse_apply(self, p: Point3) -> Point3:
        """Map a body-frame point back into the camera frame."""
        b = p.as_array() - self.translation.as_array()
        return Point3.from_array(self.rotation.T @ b)


def normalize_yaw_deg(yaw_deg: float) -> float:
    """Normalize a heading to ``[0, 360)`` degrees."""
    y = float(yaw_deg) % 360.0
    return 0.0 if y == 360.0 else y


def camera_to_body(p: Point3, ext: Extrinsics) -> Point3:
    """Apply the rigid extrinsics: ``R @ p + T``."""
    return Point3.from_array(ext.rotation @ p.as_array() + ext.translation.as_array())


def body_to_magnetic(p: Point3, yaw_deg: float) -> Point3:
    """Rotate a body-frame point into the magnetic frame by the robot yaw.

    x' = x*cos(yaw) + y*sin(yaw), y' = y*cos(yaw) - x*sin(yaw), z' = z.
    """
    rad = math.radians(normalize_yaw_deg(yaw_deg))
    c, s = math.cos(rad), math.sin(rad)
    return Point3(p.x * c + p.y * s, p.y * c - p.x * s, p.z)


def magnetic_to_body(p: Point3, yaw_deg: float) -> Point3:
    """Exact inverse of :func:`body_to_magnetic` for the same yaw."""
    rad = math.radians(normalize_yaw_deg(yaw_deg))
    c, s = math.cos(rad), math.sin(rad)
    return Point3(p.x * c - p.y * s, p.y * c + p.x * s, p.z)


def relative_direction(a: Point3, b: Point3) -> np.ndarray:
    """Direction vector from ``a`` to ``b`` (componentwise ``b - a``)."""
    return b.as_array() - a.as_array()


def vector_heading_deg(dvec) -> float:
    """Compass heading of a magnetic-frame vector in ``[0, 360)`` degrees.

    The zero vector maps to 0 by convention.  A robot facing heading
    ``yaw`` sees a landmark dead ahead at exactly this heading.
    """
    d = np.asarray(dvec, dtype=np.float64)
    if d[0] == 0.0 and d[1] == 0.0:
        return 0.0
    return normalize_yaw_deg(math.degrees(math.atan2(-d[1], d[0])))


def propagate_landmark(
    cn11: Point3,
    cn21: Point3,
    cn12: Point3,
    ext: Extrinsics,
    yaw1_deg: float,
    yaw2_deg: float,
) -> Point3:
    """Recover a currently-unseen landmark's body-frame position.

    Landmark 1 was observed in the camera at two moments (``cn11`` at
    t1, ``cn12`` at t2); landmark 2 only at t1 (``cn21``).  Both
    observations at t1 sit in the same magnetic frame, so the relative
    vector between the landmarks is time-invariant; adding it to
    landmark 1's position at t2 yields landmark 2's magnetic position
    at t2, which the second yaw maps back into the body frame.
    """
    bn11 = camera_to_body(cn11, ext)
    bn21 = camera_to_body(cn21, ext)
    bn12 = camera_to_body(cn12, ext)
    mn11 = body_to_magnetic(bn11, yaw1_deg)
    mn21 = body_to_magnetic(bn21, yaw1_deg)
    mn12 = body_to_magnetic(bn12, yaw2_deg)
    d = relative_direction(mn11, mn21)
    mn22 = Point3.from_array(mn12.as_array() + d)
    return magnetic_to_body(mn22, yaw2_deg)

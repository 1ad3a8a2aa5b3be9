"""Pinhole projection and the per-frame pixel displacement bound it implies.

The displacement budget used by the recovery pass comes from camera geometry:
focal length and pixel size set the pixels-per-radian scale, and the bound on
how far an object can move in the camera frame between captures, divided by
its closest optical-axis distance, caps the pixel shift of its projection.
"""

from __future__ import annotations

from dataclasses import dataclass

from .streams import _as_finite_float, _require

__all__ = ["CameraModel", "project", "max_displacement", "motion_radius_from_speed"]


@dataclass(frozen=True)
class CameraModel:
    """Intrinsics plus the motion bounds feeding the displacement formula.

    Units are fixed: focal length and pixel size in millimeters (square
    pixels), principal point in pixels, motion radius and depth in meters,
    capture rate in frames per second.
    """

    focal_mm: float
    pixel_mm: float
    principal_point: tuple[float, float] = (0.0, 0.0)
    motion_radius_m: float = 0.0
    min_depth_m: float = 1.0
    fps: float | None = None
    max_speed_mps: float | None = None

    def __post_init__(self) -> None:
        _require(self.focal_mm > 0, f"focal_mm must be > 0, got {self.focal_mm}")
        _require(self.pixel_mm > 0, f"pixel_mm must be > 0, got {self.pixel_mm}")
        _require(self.motion_radius_m >= 0, f"motion_radius_m must be >= 0, got {self.motion_radius_m}")
        _require(self.min_depth_m > 0, f"min_depth_m must be > 0, got {self.min_depth_m}")
        ox, oy = self.principal_point
        object.__setattr__(
            self,
            "principal_point",
            (_as_finite_float(ox, "principal_point x"), _as_finite_float(oy, "principal_point y")),
        )
        if self.fps is not None:
            _require(self.fps > 0, f"fps must be > 0, got {self.fps}")
        if self.max_speed_mps is not None:
            _require(self.max_speed_mps >= 0, f"max_speed_mps must be >= 0, got {self.max_speed_mps}")

    @property
    def pixels_per_unit(self) -> float:
        """Focal length expressed in pixels."""
        return self.focal_mm / self.pixel_mm


def project(cam: CameraModel, x: float, y: float, z: float) -> tuple[float, float]:
    """Project a camera-frame point (x, y, z) onto the image plane in pixels."""
    if z == 0:
        raise ValueError("cannot project a point at z = 0 (projection singularity)")
    scale = cam.pixels_per_unit
    return (cam.principal_point[0] - scale * (x / z), cam.principal_point[1] - scale * (y / z))


def max_displacement(cam: CameraModel) -> float:
    """Upper bound in pixels on an object's center shift between two frames."""
    return cam.pixels_per_unit * cam.motion_radius_m / cam.min_depth_m


def motion_radius_from_speed(max_speed_mps: float, fps: float) -> float:
    """Radius of the inter-frame motion ball from linear camera speed alone.

    Rotational motion also contributes in general; callers with a rotation
    budget should add their own term to the returned radius.
    """
    _require(max_speed_mps >= 0, f"max_speed_mps must be >= 0, got {max_speed_mps}")
    _require(fps > 0, f"fps must be > 0, got {fps}")
    return max_speed_mps / fps

"""
Synthetic Models Module

Builtin velocity generators and a surface acquisition layout. The depth axis
is the last grid axis, increasing downward from the free surface.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from .constants import OFFSET_MAX, OFFSET_MIN
from .errors import InvalidArgumentError
from .mesh_model import AcquisitionGeometry, RegularGrid

logger = logging.getLogger(__name__)

GENERATORS = ("constant", "linear", "layered", "lens")


def _node_grid(grid: RegularGrid) -> Tuple[np.ndarray, ...]:
    axes = [grid.axis_coordinates(k) for k in range(grid.ndim)]
    return tuple(np.meshgrid(*axes, indexing="ij"))


def _relative_coordinates(grid: RegularGrid) -> Tuple[np.ndarray, ...]:
    """Node coordinates mapped to [0, 1] on every axis"""
    return tuple((x - o) / (u - o) for x, o, u in zip(_node_grid(grid), grid.origin, grid.upper))


def constant_velocity(grid: RegularGrid, velocity: float) -> np.ndarray:
    if not velocity > 0:
        raise InvalidArgumentError("Velocity must be positive")
    return np.full(grid.n, float(velocity))


def linear_velocity(grid: RegularGrid, v_top: float, v_bottom: float) -> np.ndarray:
    """Velocity growing linearly with depth"""
    if not (v_top > 0 and v_bottom > 0):
        raise InvalidArgumentError("Velocities must be positive")
    depth = _relative_coordinates(grid)[-1]
    return v_top + (v_bottom - v_top) * depth


def layered_velocity(grid: RegularGrid, velocities: Sequence[float],
                     interfaces: Optional[Sequence[float]] = None) -> np.ndarray:
    """
    Flat layers stacked in depth

    Args:
        grid: Core grid
        velocities: Layer velocities from top to bottom
        interfaces: Relative depths in (0, 1) of the len(velocities) - 1
            interfaces; equal thicknesses when omitted

    Returns:
        np.ndarray: Grid-shaped velocity
    """
    velocities = [float(v) for v in velocities]
    if not velocities or any(v <= 0 for v in velocities):
        raise InvalidArgumentError("Layer velocities must be positive")
    if interfaces is None:
        interfaces = [k / len(velocities) for k in range(1, len(velocities))]
    interfaces = [float(z) for z in interfaces]
    if len(interfaces) != len(velocities) - 1:
        raise InvalidArgumentError(f"{len(velocities)} layers need {len(velocities) - 1} interfaces")
    if any(not 0 < z < 1 for z in interfaces) or any(b <= a for a, b in zip(interfaces, interfaces[1:])):
        raise InvalidArgumentError("Interfaces must increase strictly inside (0, 1)")

    depth = _relative_coordinates(grid)[-1]
    layer = np.searchsorted(np.array(interfaces), depth, side="right")
    return np.array(velocities)[layer]


def _inside_ellipsoid(rel: Tuple[np.ndarray, ...], center: Sequence[float], radii: Sequence[float]) -> np.ndarray:
    if len(center) != len(rel) or len(radii) != len(rel):
        raise InvalidArgumentError(f"Center and radii need {len(rel)} components")
    if any(r <= 0 for r in radii):
        raise InvalidArgumentError("Radii must be positive")
    return sum(((x - c) / r) ** 2 for x, c, r in zip(rel, center, radii)) <= 1.0


def lens_velocity(grid: RegularGrid,
                  background: float = 2000.0,
                  contrast: float = 0.5,
                  sub_lens_contrast: float = -0.1,
                  center: Optional[Sequence[float]] = None,
                  radii: Optional[Sequence[float]] = None,
                  sub_center: Optional[Sequence[float]] = None,
                  sub_radii: Optional[Sequence[float]] = None) -> np.ndarray:
    """
    Constant background with a fast elliptic lens and a slow zone beneath it

    Positions and radii are relative to the grid extents. Contrasts are
    fractions of the background velocity.
    """
    if not background > 0 or contrast <= -1 or sub_lens_contrast <= -1:
        raise InvalidArgumentError("Lens velocities must stay positive")
    ndim = grid.ndim
    center = center or [0.5] * (ndim - 1) + [0.35]
    radii = radii or [0.2] * (ndim - 1) + [0.15]
    sub_center = sub_center or [0.5] * (ndim - 1) + [0.65]
    sub_radii = sub_radii or [0.15] * (ndim - 1) + [0.1]

    rel = _relative_coordinates(grid)
    velocity = np.full(grid.n, float(background))
    velocity[_inside_ellipsoid(rel, sub_center, sub_radii)] = background * (1.0 + sub_lens_contrast)
    velocity[_inside_ellipsoid(rel, center, radii)] = background * (1.0 + contrast)
    return velocity


def surface_positions(grid: RegularGrid, count: int, depth_index: int = 1) -> np.ndarray:
    """
    Equally spaced positions one row below the surface, snapped to nodes

    The first horizontal node and the last are excluded. In 3D, count points
    are laid out per horizontal axis, count^2 in total.
    """
    if count < 1:
        raise InvalidArgumentError("Need at least one position")
    if not 0 <= depth_index < grid.n[-1]:
        raise InvalidArgumentError(f"Depth index {depth_index} outside the grid")
    horizontal = []
    for k in range(grid.ndim - 1):
        lo = grid.origin[k] + grid.h[k]
        hi = grid.upper[k] - grid.h[k]
        x = np.linspace(lo, hi, count) if count > 1 else np.array([(lo + hi) / 2])
        horizontal.append(grid.origin[k] + np.rint((x - grid.origin[k]) / grid.h[k]) * grid.h[k])
    mesh = np.meshgrid(*horizontal, indexing="ij")
    depth = grid.origin[-1] + depth_index * grid.h[-1]
    points = [axis.ravel(order="F") for axis in mesh]
    points.append(np.full(points[0].shape, depth))
    return np.stack(points, axis=1)


def top_surface_acquisition(grid: RegularGrid,
                            n_sources: int,
                            n_receivers: int,
                            depth_index: int = 1,
                            offset_min: float = OFFSET_MIN,
                            offset_max: float = OFFSET_MAX) -> AcquisitionGeometry:
    """Sources and receivers along the top of the core grid with an offset window"""
    geometry = AcquisitionGeometry(
        grid=grid,
        sources=surface_positions(grid, n_sources, depth_index),
        receivers=surface_positions(grid, n_receivers, depth_index),
        offset_min=offset_min,
        offset_max=offset_max,
    )
    active = geometry.active_mask
    if not np.all(active.any(axis=1)):
        logger.warning("Some sources have no receiver inside the offset window")
    return geometry

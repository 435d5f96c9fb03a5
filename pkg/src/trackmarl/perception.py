"""Frame -> detection set via per-role color thresholding and blob extraction.

A pixel belongs to a role when every channel is within ``tolerance`` of that
role's color; 4-connected components of at least ``MIN_AREA`` pixels become one
detection at the blob centroid, mapped back to world coordinates through the
inverse of the render projection. Output order is scanline discovery order and
must not be relied on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import arena
from .kernels import blob_stats, role_match_map

MIN_AREA = 3  # suppress sub-blob specks


@dataclass(frozen=True)
class Detection:
    role: int
    coords: np.ndarray  # (2,) world units
    area: int = 0


@dataclass(frozen=True)
class ColorMap:
    """Role index -> RGB color, with the per-channel matching tolerance."""

    colors: np.ndarray  # (R, 3) uint8
    tolerance: int = 10

    def __post_init__(self):
        c = np.asarray(self.colors, dtype=np.int64)
        for i in range(len(c)):
            for j in range(i + 1, len(c)):
                sep = int(np.abs(c[i] - c[j]).max())
                if sep <= 2 * self.tolerance:
                    raise ValueError(
                        f"role colors {i} and {j} separated by {sep} <= 2*tolerance={2 * self.tolerance}"
                    )

    @classmethod
    def for_task(cls, cfg: arena.TaskConfig) -> "ColorMap":
        return cls(colors=arena.layout(cfg).role_colors, tolerance=cfg.color_tolerance)


def detect(frame: np.ndarray, colormap: ColorMap, cfg: arena.TaskConfig) -> list:
    """Extract one Detection per role-colored blob of area >= MIN_AREA."""
    h, w = frame.shape[:2]
    if (h, w) != (cfg.image_size, cfg.image_size):
        raise ValueError(f"frame is {h}x{w}, config expects {cfg.image_size}x{cfg.image_size}")
    rmap = role_match_map(frame, np.asarray(colormap.colors, dtype=np.int64), colormap.tolerance)
    roles, areas, sum_y, sum_x = blob_stats(rmap)
    keep = areas >= MIN_AREA
    if not keep.any():
        return []
    roles, areas = roles[keep], areas[keep]
    centroids_px = np.stack([sum_x[keep] / areas, sum_y[keep] / areas], axis=1)
    world = arena.pixel_to_world(centroids_px, cfg)
    return [
        Detection(role=int(roles[i]), coords=world[i], area=int(areas[i]))
        for i in range(len(roles))
    ]


def inject_dropout(dets: list, p: float, rng: np.random.Generator) -> list:
    """Independently drop each detection with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("dropout rate must lie in [0, 1]")
    if p == 0.0 or not dets:
        return list(dets)
    draws = rng.random(len(dets))
    return [d for d, u in zip(dets, draws) if u >= p]

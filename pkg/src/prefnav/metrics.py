"""Trajectory metrics: Hausdorff distance and preference-aligned arc length."""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError
from .world import Trajectory, WorldMap, terrain_at


def _points(traj) -> np.ndarray:
    xy = traj.xy if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)[..., :2]
    return np.asarray(xy, dtype=float).reshape(-1, 2)


def _directed(p: np.ndarray, q: np.ndarray, chunk=2048) -> float:
    worst = 0.0
    for i in range(0, len(p), chunk):
        d = p[i:i + chunk, None, :] - q[None, :, :]
        sq = d[..., 0] ** 2 + d[..., 1] ** 2
        worst = max(worst, float(sq.min(axis=1).max()))
    return worst


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance between the (x, y) point sets of two trajectories."""
    p, q = _points(a), _points(b)
    if len(p) == 0 or len(q) == 0:
        raise ValidationError("hausdorff needs two non-empty trajectories")
    # squared distances keep min/max exact; one sqrt at the end
    return math.sqrt(max(_directed(p, q), _directed(q, p)))


def aligned_percentage(traj, world: WorldMap, acceptable) -> float:
    """Percent of arc length whose segment midpoints lie on acceptable terrain.

    A trajectory with no length counts as 100 if its first state is on
    acceptable terrain and 0 otherwise.
    """
    xy = _points(traj)
    if len(xy) == 0:
        raise ValidationError("aligned_percentage needs a non-empty trajectory")
    acceptable = {int(t) for t in acceptable}
    seg = np.hypot(*(xy[1:] - xy[:-1]).T)
    total = float(seg.sum())
    if total == 0.0:
        return 100.0 if terrain_at(world, xy[0]) in acceptable else 0.0
    mids = 0.5 * (xy[1:] + xy[:-1])
    ok = np.array([terrain_at(world, m) in acceptable for m in mids], dtype=bool)
    return float(100.0 * seg[ok].sum() / total)

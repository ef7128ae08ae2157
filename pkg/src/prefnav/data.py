"""Labeled dataset generation and byte-deterministic persistence.

Each trajectory file is a zip archive of ``.npy`` members with a fixed
timestamp, so equal inputs give equal bytes:

- ``patches``  float32 (N, 64, 64, 3)
- ``windows``  float64 (N, 6, 400) raw proprio windows
- ``features`` float64 (N, 84)
- ``labels``   int64 (N,)
- ``poses``    float64 (N, 3)
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .encoders import LabeledDataset
from .errors import ValidationError
from .features import featurize
from .world import (
    DAYLIGHT, Limits, RobotState, TerrainClass, WorldMap, generate_patch, generate_proprio, step,
)

_ZIP_TIME = (1980, 1, 1, 0, 0, 0)
_MEMBERS = ("patches", "windows", "features", "labels", "poses")


def write_arrays(path, arrays: dict) -> None:
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_TIME)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def read_arrays(path) -> dict:
    out = {}
    with zipfile.ZipFile(path) as zf:
        for name in zf.namelist():
            with zf.open(name) as fh:
                out[name.removesuffix(".npy")] = np.load(io.BytesIO(fh.read()), allow_pickle=False)
    return out


def random_walk(world: WorldMap, n_states: int, seed, dt=0.1, stride=5, limits=Limits()):
    """States of a bounded random walk; the heading turns back near edges."""
    rng = np.random.default_rng(seed)
    w, h = world.extent
    margin = 1.0
    s = RobotState(rng.uniform(margin, w - margin), rng.uniform(margin, h - margin),
                   rng.uniform(-np.pi, np.pi))
    states = []
    while len(states) < n_states:
        v = rng.uniform(0.4, limits.v_max)
        omega = rng.uniform(-limits.omega_max, limits.omega_max)
        for _ in range(stride):
            nxt = step(s, (v, omega), dt, limits)
            if not (margin <= nxt.x <= w - margin and margin <= nxt.y <= h - margin):
                to_center = np.arctan2(h / 2 - s.y, w / 2 - s.x)
                nxt = RobotState(s.x, s.y, to_center)
            s = nxt
        states.append(s)
    return states


def single_terrain_world(terrain: TerrainClass, size=12, cell_size=1.0, lighting=DAYLIGHT) -> WorldMap:
    grid = np.full((size, size), terrain.id)
    c = size * cell_size / 2
    return WorldMap({terrain.id: terrain}, grid, cell_size, RobotState(c, c), (c, c), lighting,
                    name=f"{terrain.name}-field")


def record_states(world: WorldMap, states, seed, label=None, bands=10) -> dict:
    """Paired observations at ``states``; ``label`` defaults to the true terrain."""
    patches, windows, feats, labels, poses = [], [], [], [], []
    for i, s in enumerate(states):
        base = [int(v) for v in np.atleast_1d(seed)] + [i]
        p = generate_patch(world, s, base + [0])
        w = generate_proprio(world, s, base + [1])
        patches.append(p.pixels)
        windows.append(w.channels)
        feats.append(featurize(w, bands))
        labels.append(p.terrain_id_truth if label is None else label)
        poses.append(s.as_array())
    if not states:
        return empty_arrays(bands)
    return {"patches": np.stack(patches).astype(np.float32), "windows": np.stack(windows),
            "features": np.stack(feats), "labels": np.asarray(labels, dtype=np.int64),
            "poses": np.stack(poses)}


def empty_arrays(bands=10) -> dict:
    return {"patches": np.zeros((0, 64, 64, 3), np.float32), "windows": np.zeros((0, 6, 400)),
            "features": np.zeros((0, 6 * (4 + bands))), "labels": np.zeros(0, np.int64),
            "poses": np.zeros((0, 3))}


def dataset_from_arrays(arrays: dict) -> LabeledDataset:
    return LabeledDataset(arrays["patches"], arrays["features"], arrays["labels"], arrays["poses"])


def gen_data(terrains, trajectories_per_terrain: int, rng_seed: int, out_dir=None,
             states_per_trajectory: int = 20, lighting=DAYLIGHT) -> LabeledDataset:
    """Single-terrain traversals, one labeled trajectory per file.

    ``terrains`` is an iterable of :class:`TerrainClass`. When ``out_dir``
    is given, writes ``traj_<terrain>_<k>.npz`` files plus ``manifest.json``.
    """
    terrains = list(terrains.values()) if isinstance(terrains, dict) else list(terrains)
    parts, files = [], []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    for t in terrains:
        world = single_terrain_world(t, lighting=lighting)
        for k in range(trajectories_per_terrain):
            seed = [int(rng_seed), t.id, k]
            states = random_walk(world, states_per_trajectory, seed + [0])
            arrays = record_states(world, states, seed + [1])
            parts.append(arrays)
            if out_dir is not None:
                name = f"traj_{t.id}_{k:02d}.npz"
                write_arrays(out_dir / name, arrays)
                files.append({"file": name, "terrain": t.id, "name": t.name, "records": len(states)})
    if out_dir is not None:
        manifest = {"seed": int(rng_seed), "trajectories_per_terrain": trajectories_per_terrain,
                    "states_per_trajectory": states_per_trajectory, "files": files}
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return concat_arrays(parts)


def concat_arrays(parts) -> LabeledDataset:
    parts = list(parts)
    if not parts:
        return dataset_from_arrays(empty_arrays())
    return dataset_from_arrays({k: np.concatenate([p[k] for p in parts]) for k in _MEMBERS})


def load_dataset(directory) -> LabeledDataset:
    directory = Path(directory)
    manifest = directory / "manifest.json"
    if manifest.exists():
        names = [f["file"] for f in json.loads(manifest.read_text())["files"]]
    else:
        names = sorted(p.name for p in directory.glob("*.npz"))
        if not names:
            raise ValidationError(f"no dataset files or manifest in {directory}")
    return concat_arrays(read_arrays(directory / n) for n in names)

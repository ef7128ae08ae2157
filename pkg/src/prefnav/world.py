"""Procedural terrain world: the stand-in for the robot and its environment.

A :class:`WorldMap` is a grid of terrain-class ids. Each :class:`TerrainClass`
carries a visual texture model (base colour plus multi-octave value noise)
and a proprioceptive signature (one damped-free sinusoid plus Gaussian noise
per channel). Lighting only touches the visual side.

Every generator is a pure function of ``(world, state, seed)``. Seeds may be
ints or int sequences (anything :func:`numpy.random.default_rng` accepts).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import BoundsError, ConfigError, ValidationError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

PATCH_PIXELS = 64
N_CHANNELS = 6
SAMPLE_RATE = 200.0
WINDOW_SECONDS = 2.0
CHANNEL_NAMES = (
    "angular_velocity_x", "angular_velocity_y", "linear_acceleration_z",
    "joint_angle", "joint_velocity", "foot_penetration",
)


@dataclass(frozen=True)
class TextureNoise:
    amplitude: float = 0.0
    spatial_frequency: float = 4.0
    octaves: int = 1


@dataclass(frozen=True)
class ChannelSignature:
    dominant_frequency: float
    vibration_amplitude: float
    noise_floor: float


@dataclass(frozen=True)
class TerrainClass:
    id: int
    name: str
    base_color: tuple[float, float, float]
    texture_noise: TextureNoise
    proprio_signature: tuple[ChannelSignature, ...]
    friction_slip: float = 0.0

    def __post_init__(self):
        if len(self.base_color) != 3 or not all(0.0 <= c <= 1.0 for c in self.base_color):
            raise ConfigError(f"{self.name}: base_color must be an RGB triple in [0, 1]")
        tex = self.texture_noise
        if not (0.0 <= tex.amplitude <= 1.0) or tex.spatial_frequency <= 0 or tex.octaves < 1:
            raise ConfigError(f"{self.name}: invalid texture parameters {tex}")
        if len(self.proprio_signature) != N_CHANNELS:
            raise ConfigError(f"{self.name}: need {N_CHANNELS} proprio channels")
        for ch in self.proprio_signature:
            vals = (ch.dominant_frequency, ch.vibration_amplitude, ch.noise_floor)
            if not all(math.isfinite(v) for v in vals) or min(vals) < 0:
                raise ConfigError(f"{self.name}: proprio parameters must be finite and non-negative")
            if ch.dominant_frequency >= SAMPLE_RATE / 2:
                raise ConfigError(f"{self.name}: {ch.dominant_frequency} Hz is above Nyquist")
        if not 0.0 <= self.friction_slip <= 1.0:
            raise ConfigError(f"{self.name}: friction_slip must lie in [0, 1]")


@dataclass(frozen=True)
class HalfPlaneShadow:
    """Pixels with ``(p - point) . normal > 0`` are scaled by ``factor``."""

    point: tuple[float, float]
    normal: tuple[float, float]
    factor: float = 0.5


@dataclass(frozen=True)
class LightingCondition:
    brightness_scale: float = 1.0
    color_shift: tuple[float, float, float] = (0.0, 0.0, 0.0)
    shadow: HalfPlaneShadow | None = None

    def __post_init__(self):
        if not self.brightness_scale > 0:
            raise ConfigError("brightness_scale must be positive")
        if self.shadow is not None and not 0.0 <= self.shadow.factor <= 1.0:
            raise ConfigError("shadow factor must lie in [0, 1]")

    @property
    def is_identity(self) -> bool:
        return self.brightness_scale == 1.0 and not any(self.color_shift) and self.shadow is None


DAYLIGHT = LightingCondition()
NIGHT = LightingCondition(brightness_scale=0.3, color_shift=(-0.02, -0.01, 0.04))


def wrap_angle(theta: float) -> float:
    """Map an angle into (-pi, pi]."""
    wrapped = math.remainder(theta, 2 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self):
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class Limits:
    v_max: float = 1.6
    omega_max: float = 1.5


@dataclass(frozen=True, eq=False)
class WorldMap:
    terrains: dict[int, TerrainClass]
    grid: np.ndarray
    cell_size: float
    start: RobotState
    goal: tuple[float, float]
    lighting: LightingCondition = DAYLIGHT
    patch_size: float = 1.0
    name: str = "world"

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.int64)
        if grid.ndim != 2 or grid.size == 0:
            raise ConfigError("grid must be a non-empty 2-D array")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        names = [t.name for t in self.terrains.values()]
        if len(set(names)) != len(names):
            raise ConfigError("terrain names must be unique")
        if any(k != t.id for k, t in self.terrains.items()):
            raise ConfigError("terrain dict keys must equal terrain ids")
        unknown = set(np.unique(grid).tolist()) - set(self.terrains)
        if unknown:
            raise ConfigError(f"grid refers to undeclared terrain ids {sorted(unknown)}")
        if self.cell_size <= 0:
            raise ConfigError("cell_size must be positive")
        if not self.in_bounds(self.start.x, self.start.y) or not self.in_bounds(*self.goal):
            raise ConfigError("start and goal must lie inside the world")

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def extent(self) -> tuple[float, float]:
        return self.width * self.cell_size, self.height * self.cell_size

    def in_bounds(self, x, y) -> bool:
        w, h = self.extent
        return 0.0 <= x <= w and 0.0 <= y <= h

    def cell_of(self, x, y) -> tuple[int, int]:
        """(row, col) by flooring; the far edges belong to the last cell."""
        if not self.in_bounds(x, y):
            raise BoundsError(f"({x:.3f}, {y:.3f}) is outside the {self.extent} world")
        col = min(int(math.floor(x / self.cell_size)), self.width - 1)
        row = min(int(math.floor(y / self.cell_size)), self.height - 1)
        return row, col

    def cell_center(self, row, col) -> tuple[float, float]:
        return (col + 0.5) * self.cell_size, (row + 0.5) * self.cell_size

    def with_lighting(self, lighting: LightingCondition) -> "WorldMap":
        return replace(self, lighting=lighting)


@dataclass(frozen=True, eq=False)
class PatchObservation:
    pixels: np.ndarray
    source_state: RobotState
    terrain_id_truth: int


@dataclass(frozen=True, eq=False)
class ProprioWindow:
    channels: np.ndarray
    sample_rate: float
    source_state: RobotState
    terrain_id_truth: int


# --------------------------------------------------------------------------
# Generators
# --------------------------------------------------------------------------

def _state_xy(state):
    if isinstance(state, RobotState):
        return state.x, state.y
    return float(state[0]), float(state[1])


def terrain_at(world: WorldMap, state) -> int:
    row, col = world.cell_of(*_state_xy(state))
    return int(world.grid[row, col])


def value_noise(rng, size: int, frequency: float, octaves: int) -> np.ndarray:
    """Multi-octave value noise on a size x size grid, normalized into [-1, 1]."""
    out = np.zeros((size, size))
    total = 0.0
    coords = (np.arange(size) + 0.5) / size
    for octave in range(octaves):
        freq = frequency * 2 ** octave
        amp = 0.5 ** octave
        n = int(math.ceil(freq)) + 1
        lattice = rng.uniform(-1.0, 1.0, size=(n + 1, n + 1))
        u = coords * freq
        i0 = np.floor(u).astype(int)
        f = u - i0
        s = f * f * (3 - 2 * f)
        top = lattice[i0][:, i0] * (1 - s)[None, :] + lattice[i0][:, i0 + 1] * s[None, :]
        bot = lattice[i0 + 1][:, i0] * (1 - s)[None, :] + lattice[i0 + 1][:, i0 + 1] * s[None, :]
        out += amp * (top * (1 - s)[:, None] + bot * s[:, None])
        total += amp
    return out / total


def apply_lighting(pixels: np.ndarray, lighting: LightingCondition, center=None, patch_size=1.0):
    """Scale, shift and shadow a patch, then clamp to [0, 1]."""
    if lighting.is_identity:
        return pixels
    out = pixels * lighting.brightness_scale + np.asarray(lighting.color_shift, dtype=pixels.dtype)
    if lighting.shadow is not None and center is not None:
        size = pixels.shape[0]
        offs = ((np.arange(size) + 0.5) / size - 0.5) * patch_size
        px = center[0] + offs[None, :]
        py = center[1] + offs[:, None]
        sh = lighting.shadow
        side = (px - sh.point[0]) * sh.normal[0] + (py - sh.point[1]) * sh.normal[1]
        out = out * np.where(side > 0, sh.factor, 1.0)[..., None]
    return np.clip(out, 0.0, 1.0).astype(pixels.dtype)


def render_patch(terrain: TerrainClass, seed, lighting=DAYLIGHT, center=None, patch_size=1.0):
    rng = np.random.default_rng(seed)
    tex = terrain.texture_noise
    pixels = np.empty((PATCH_PIXELS, PATCH_PIXELS, 3))
    pixels[:] = terrain.base_color
    if tex.amplitude > 0:
        noise = value_noise(rng, PATCH_PIXELS, tex.spatial_frequency, tex.octaves)
        pixels += tex.amplitude * noise[..., None]
    pixels = np.clip(pixels, 0.0, 1.0).astype(np.float32)
    return apply_lighting(pixels, lighting, center, patch_size)


def generate_patch(world: WorldMap, state: RobotState, rng_seed) -> PatchObservation:
    """Bird's-eye patch of the terrain under ``state`` (ground-truth rendering)."""
    tid = terrain_at(world, state)
    pixels = render_patch(world.terrains[tid], rng_seed, world.lighting,
                          _state_xy(state), world.patch_size)
    return PatchObservation(pixels, state, tid)


def synthesize_proprio(terrain: TerrainClass, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = int(round(SAMPLE_RATE * WINDOW_SECONDS))
    t = np.arange(n) / SAMPLE_RATE
    phases = rng.uniform(0.0, 2 * math.pi, size=N_CHANNELS)
    noise = rng.standard_normal((N_CHANNELS, n))
    out = np.empty((N_CHANNELS, n))
    for c, sig in enumerate(terrain.proprio_signature):
        out[c] = (sig.vibration_amplitude * np.sin(2 * math.pi * sig.dominant_frequency * t + phases[c])
                  + sig.noise_floor * noise[c])
    return out


def generate_proprio(world: WorldMap, state: RobotState, rng_seed) -> ProprioWindow:
    """Two seconds of the six proprioceptive channels at ``state``.

    Lighting is deliberately not an input here."""
    tid = terrain_at(world, state)
    return ProprioWindow(synthesize_proprio(world.terrains[tid], rng_seed), SAMPLE_RATE, state, tid)


# --------------------------------------------------------------------------
# Motion
# --------------------------------------------------------------------------

def step(state: RobotState, action, dt: float, limits: Limits = Limits()) -> RobotState:
    """Exact unicycle integration of a constant ``(v, omega)`` over ``dt``."""
    v, omega = action
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if abs(v) > limits.v_max + 1e-12 or abs(omega) > limits.omega_max + 1e-12:
        raise ValidationError(f"action ({v}, {omega}) exceeds limits {limits}")
    th = state.theta
    # half-angle form: no cancellation as omega -> 0
    half = 0.5 * omega * dt
    d = v * dt * float(np.sinc(half / math.pi))
    return RobotState(state.x + d * math.cos(th + half),
                      state.y + d * math.sin(th + half),
                      th + omega * dt)


def rollout(x, y, theta, v, omega, dt, n_steps):
    """Vectorized closed-form rollout for arrays of actions.

    Returns an array of shape (len(v), n_steps, 3); entry k is the pose after
    ``k + 1`` steps, evaluated with the same closed form as :func:`step`
    applied at time ``(k + 1) * dt`` from the start pose.
    """
    v = np.asarray(v, dtype=float)[:, None]
    omega = np.asarray(omega, dtype=float)[:, None]
    t = dt * np.arange(1, n_steps + 1)[None, :]
    half = 0.5 * omega * t
    d = v * t * np.sinc(half / math.pi)
    xs = x + d * np.cos(theta + half)
    ys = y + d * np.sin(theta + half)
    ths = theta + omega * t
    ths = np.remainder(ths + math.pi, 2 * math.pi) - math.pi
    ths = np.where(ths == -math.pi, math.pi, ths)
    return np.stack([xs, ys, ths], axis=-1)


# --------------------------------------------------------------------------
# Trajectories and execution
# --------------------------------------------------------------------------

@dataclass(eq=False)
class Trajectory:
    """Ordered poses (N, 3) plus optional per-state annotations."""

    poses: np.ndarray
    action: tuple[float, float] | None = None
    utilities: np.ndarray | None = None
    terrain_ids: np.ndarray | None = None
    observations: list = field(default_factory=list)

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=float).reshape(-1, 3)

    def __len__(self):
        return len(self.poses)

    @property
    def states(self) -> list[RobotState]:
        return [RobotState(*p) for p in self.poses]

    @property
    def xy(self) -> np.ndarray:
        return self.poses[:, :2]

    @classmethod
    def from_states(cls, states, **kw):
        return cls(np.array([[s.x, s.y, s.theta] for s in states]), **kw)


def observation_seed(seed, index):
    return [int(s) for s in np.atleast_1d(seed)] + [int(index)]


def observe(world: WorldMap, state: RobotState, seed):
    """Paired (patch, proprio) observation at one state."""
    return (generate_patch(world, state, [*seed, 0]), generate_proprio(world, state, [*seed, 1]))


def execute(world: WorldMap, plan: Trajectory, per_state_observe: bool = False, seed=0) -> Trajectory:
    """Replay ``plan`` in the world, annotating terrain ids and (optionally)
    collecting paired observations at every state."""
    if len(plan) == 0:
        raise ValidationError("cannot execute an empty plan")
    states = plan.states
    ids = np.array([terrain_at(world, s) for s in states], dtype=np.int64)
    obs = []
    if per_state_observe:
        obs = [observe(world, s, observation_seed(seed, i)) for i, s in enumerate(states)]
    return Trajectory(plan.poses.copy(), plan.action, plan.utilities, ids, obs)


# --------------------------------------------------------------------------
# World files and image dumps
# --------------------------------------------------------------------------

_GRID_CHARS = "0123456789abcdefghijklmnopqrstuvwxyz"


def _terrain_from_dict(d) -> TerrainClass:
    tex = d.get("texture", {})
    return TerrainClass(
        id=int(d["id"]), name=str(d["name"]),
        base_color=tuple(float(c) for c in d["base_color"]),
        texture_noise=TextureNoise(float(tex.get("amplitude", 0.0)),
                                   float(tex.get("spatial_frequency", 4.0)),
                                   int(tex.get("octaves", 1))),
        proprio_signature=tuple(ChannelSignature(float(c["dominant_frequency"]),
                                                 float(c["vibration_amplitude"]),
                                                 float(c["noise_floor"])) for c in d["proprio"]),
        friction_slip=float(d.get("friction_slip", 0.0)),
    )


def terrain_to_dict(t: TerrainClass) -> dict:
    return {
        "id": t.id, "name": t.name, "base_color": list(t.base_color),
        "friction_slip": t.friction_slip,
        "texture": {"amplitude": t.texture_noise.amplitude,
                    "spatial_frequency": t.texture_noise.spatial_frequency,
                    "octaves": t.texture_noise.octaves},
        "proprio": [{"dominant_frequency": c.dominant_frequency,
                     "vibration_amplitude": c.vibration_amplitude,
                     "noise_floor": c.noise_floor} for c in t.proprio_signature],
    }


def terrains_from_list(items) -> dict[int, TerrainClass]:
    out = {}
    for d in items:
        t = _terrain_from_dict(d)
        if t.id in out:
            raise ConfigError(f"duplicate terrain id {t.id}")
        out[t.id] = t
    return out


def lighting_from_dict(d) -> LightingCondition:
    if not d:
        return DAYLIGHT
    shadow = None
    if "shadow" in d:
        s = d["shadow"]
        shadow = HalfPlaneShadow(tuple(s["point"]), tuple(s["normal"]), float(s.get("factor", 0.5)))
    return LightingCondition(float(d.get("brightness_scale", 1.0)),
                             tuple(float(c) for c in d.get("color_shift", (0.0, 0.0, 0.0))), shadow)


def lighting_to_dict(lt: LightingCondition) -> dict:
    d = {"brightness_scale": lt.brightness_scale, "color_shift": list(lt.color_shift)}
    if lt.shadow is not None:
        d["shadow"] = {"point": list(lt.shadow.point), "normal": list(lt.shadow.normal),
                       "factor": lt.shadow.factor}
    return d


def parse_grid(text: str) -> np.ndarray:
    """Rows of single-character ids; the first row is y = 0 (south)."""
    rows = [r.strip() for r in text.strip().splitlines() if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError("grid rows must be non-empty and equally long")
    try:
        return np.array([[_GRID_CHARS.index(ch) for ch in r] for r in rows], dtype=np.int64)
    except ValueError as exc:
        raise ConfigError(f"bad grid character: {exc}") from None


def format_grid(grid: np.ndarray) -> str:
    return "\n".join("".join(_GRID_CHARS[v] for v in row) for row in np.asarray(grid)) + "\n"


def world_from_dict(d, terrains=None) -> WorldMap:
    try:
        if "terrain" in d:
            terrains = terrains_from_list(d["terrain"])
        if not terrains:
            raise ConfigError("world declares no terrain classes")
        start = d["start"]
        return WorldMap(
            terrains=terrains, grid=parse_grid(d["grid"]), cell_size=float(d["cell_size"]),
            start=RobotState(*[float(v) for v in start]),
            goal=tuple(float(v) for v in d["goal"][:2]),
            lighting=lighting_from_dict(d.get("lighting")),
            patch_size=float(d.get("patch_size", 1.0)), name=str(d.get("name", "world")),
        )
    except KeyError as exc:
        raise ConfigError(f"world file missing key {exc}") from None


def world_to_dict(world: WorldMap) -> dict:
    return {
        "name": world.name, "cell_size": world.cell_size, "patch_size": world.patch_size,
        "start": [world.start.x, world.start.y, world.start.theta], "goal": list(world.goal),
        "grid": format_grid(world.grid), "lighting": lighting_to_dict(world.lighting),
        "terrain": [terrain_to_dict(t) for t in world.terrains.values()],
    }


def load_world(path) -> WorldMap:
    with open(path, "rb") as fh:
        try:
            return world_from_dict(tomllib.load(fh))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


def save_world(world: WorldMap, path) -> None:
    import tomli_w
    Path(path).write_text(tomli_w.dumps(world_to_dict(world)))


def write_ppm(path, pixels: np.ndarray) -> None:
    """Binary P6 dump of an (H, W, 3) image with values in [0, 1]."""
    img = np.clip(np.round(np.asarray(pixels) * 255), 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P6":
        raise ValidationError("not a P6 image")
    w, h = int(fields[1]), int(fields[2])
    pos += 1  # single whitespace byte after maxval
    return np.frombuffer(data[pos:pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3)

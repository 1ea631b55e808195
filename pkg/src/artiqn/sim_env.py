"""Deterministic 2D point-mass navigation world with a 4-beam axis lidar.

The drone is a point mass at `drone_pos`; obstacles are closed polygons
flattened to line segments. All randomness comes in through explicit
numpy generators, so a world is a pure function of its seed stream.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GenerationError, ScenarioError

# Velocity directions in action-index order (0, pi/2, pi, 3pi/2).
DIRECTIONS = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])

# Laser beams in observation order (+x, -x, +y, -y).
LASER_DIRS = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])

N_CIRCLE_SIDES = 16


class Termination(enum.Enum):
    NONE = "none"
    GOAL = "goal"
    COLLISION = "collision"
    TIMEOUT = "timeout"


@dataclass
class EnvConfig:
    """Simulator parameters. Defaults match the reference hyperparameter table."""

    T: float = 0.1              # control period [s]
    v_m: float = 1.0            # max speed [m/s]
    m: int = 3                  # speed magnitudes per direction
    r_d: float = 0.05           # drone radius [m]
    d_f: float = 0.1            # goal-reached threshold [m]
    d_s: float = 0.2            # safety margin [m]
    H: int = 200                # episode horizon [steps]
    laser_max_range: float = 4.0
    noise_mu: float = 0.0
    noise_sigma: float = 0.01
    d_g_range: tuple[float, float] = (5.0, 7.0)
    n_obs_range: tuple[int, int] = (0, 5)
    arena_side: float = 10.0
    start: tuple[float, float] = (1.5, 5.0)
    include_walls: bool = True
    clearance: float = 0.5
    obs_size_range: tuple[float, float] = (0.2, 1.0)

    def validate(self) -> None:
        if not (self.r_d < self.d_s < self.laser_max_range):
            raise ValueError("need r_d < d_s < laser_max_range")
        if self.T <= 0:
            raise ValueError("step period must be positive")
        if self.m < 1:
            raise ValueError("need at least one speed magnitude")


@dataclass(frozen=True)
class Action:
    index: int
    velocity: np.ndarray  # [vx, vy] in m/s


def action_set(cfg: EnvConfig) -> list[Action]:
    """All 4*m discrete velocity actions, direction-major, magnitude-minor.

    Magnitudes form the descending-by-halves geometric family anchored at
    v_m: {v_m * 2^-(m-1-i)} for i = 0..m-1 (ascending order).
    """
    mags = [cfg.v_m * 2.0 ** -(cfg.m - 1 - i) for i in range(cfg.m)]
    actions = []
    for d in range(4):
        for i, mag in enumerate(mags):
            idx = d * cfg.m + i
            actions.append(Action(index=idx, velocity=mag * DIRECTIONS[d]))
    return actions


@dataclass
class ObstacleSet:
    """Polygons plus their flattened segment representation.

    `seg_a`/`seg_b` hold every segment endpoint, including arena walls when
    present; `polygons` keeps only the source shapes for serialization.
    """

    polygons: list[np.ndarray] = field(default_factory=list)
    seg_a: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    seg_b: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    @classmethod
    def build(cls, polygons: list[np.ndarray], wall_segments: np.ndarray | None = None) -> "ObstacleSet":
        a_parts, b_parts = [], []
        for poly in polygons:
            closed = np.vstack([poly, poly[:1]])
            a_parts.append(closed[:-1])
            b_parts.append(closed[1:])
        if wall_segments is not None and len(wall_segments):
            a_parts.append(wall_segments[:, 0])
            b_parts.append(wall_segments[:, 1])
        if a_parts:
            seg_a = np.vstack(a_parts).astype(float)
            seg_b = np.vstack(b_parts).astype(float)
        else:
            seg_a = np.zeros((0, 2))
            seg_b = np.zeros((0, 2))
        lengths = np.linalg.norm(seg_b - seg_a, axis=1)
        if len(lengths) and not np.all(lengths > 0):
            raise ValueError("degenerate zero-length obstacle segment")
        return cls(polygons=[p.astype(float) for p in polygons], seg_a=seg_a, seg_b=seg_b)

    def __len__(self) -> int:
        return len(self.seg_a)

    def min_distance(self, p: np.ndarray) -> float:
        """Distance from point p to the nearest segment (inf when empty)."""
        if len(self.seg_a) == 0:
            return math.inf
        e = self.seg_b - self.seg_a
        ap = p[None, :] - self.seg_a
        t = np.clip(np.einsum("ij,ij->i", ap, e) / np.einsum("ij,ij->i", e, e), 0.0, 1.0)
        closest = self.seg_a + t[:, None] * e
        return float(np.min(np.linalg.norm(p[None, :] - closest, axis=1)))


@dataclass
class WorldState:
    drone_pos: np.ndarray
    goal_pos: np.ndarray
    obstacles: ObstacleSet
    step_count: int = 0
    terminated: Termination = Termination.NONE


@dataclass(frozen=True)
class Observation:
    p: np.ndarray      # drone position [m]
    d_g: float         # distance to goal [m]
    d_l: np.ndarray    # laser ranges in (+x, -x, +y, -y) order [m]


def cast_ray(origin: np.ndarray, direction: np.ndarray, obstacles: ObstacleSet,
             max_range: float) -> float:
    """Distance along a unit-direction ray to the nearest segment hit.

    Returns max_range when nothing is hit within range. Rays parallel to a
    segment never register it.
    """
    if len(obstacles) == 0:
        return float(max_range)
    a = obstacles.seg_a
    e = obstacles.seg_b - a
    ao = a - origin[None, :]
    denom = direction[0] * e[:, 1] - direction[1] * e[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ao[:, 0] * e[:, 1] - ao[:, 1] * e[:, 0]) / denom
        u = (ao[:, 0] * direction[1] - ao[:, 1] * direction[0]) / denom
    valid = (denom != 0.0) & (t >= 0.0) & (u >= 0.0) & (u <= 1.0)
    if not np.any(valid):
        return float(max_range)
    return float(min(np.min(t[valid]), max_range))


def observe(state: WorldState, noise_rng: np.random.Generator, cfg: EnvConfig) -> Observation:
    """Noisy lidar readings plus the exact goal distance."""
    p = state.drone_pos
    d_g = float(np.linalg.norm(p - state.goal_pos))
    raw = np.array([cast_ray(p, LASER_DIRS[i], state.obstacles, cfg.laser_max_range)
                    for i in range(4)])
    eps = noise_rng.normal(cfg.noise_mu, cfg.noise_sigma, size=4)
    d_l = np.clip(raw + eps, 0.0, cfg.laser_max_range)
    return Observation(p=p.copy(), d_g=d_g, d_l=d_l)


def step(state: WorldState, action: Action, cfg: EnvConfig) -> tuple[WorldState, float, Termination]:
    """Advance the world one control period.

    Reward branches, in priority order: goal bonus, collision penalty,
    proximity penalty inside the safety margin, flat step penalty.
    """
    if state.terminated is not Termination.NONE:
        raise ValueError(f"cannot step a terminated world (state: {state.terminated.value})")
    new_pos = state.drone_pos + action.velocity * cfg.T
    d_g = float(np.linalg.norm(new_pos - state.goal_pos))
    d_o = state.obstacles.min_distance(new_pos)

    term = Termination.NONE
    if d_g < cfg.d_f:
        reward = 50.0
        term = Termination.GOAL
    elif d_o < cfg.r_d:
        reward = -25.0
        term = Termination.COLLISION
    elif cfg.r_d < d_o < cfg.d_s:
        reward = 5.0 * (d_o - cfg.d_s)
    else:
        reward = -0.1

    step_count = state.step_count + 1
    if term is Termination.NONE and step_count >= cfg.H:
        term = Termination.TIMEOUT
    new_state = replace(state, drone_pos=new_pos, step_count=step_count, terminated=term)
    return new_state, reward, term


def _wall_segments(side: float) -> np.ndarray:
    c = [(0.0, 0.0), (side, 0.0), (side, side), (0.0, side)]
    return np.array([[c[i], c[(i + 1) % 4]] for i in range(4)])


def _point_in_polygon(p: np.ndarray, poly: np.ndarray) -> bool:
    # Ray-crossing parity test; boundary points may land either way, which
    # is fine because callers also enforce a clearance distance.
    x, y = p
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xc:
                inside = not inside
    return inside


def _polygon_clear_of(poly: np.ndarray, points: list[np.ndarray], clearance: float) -> bool:
    obs = ObstacleSet.build([poly])
    for pt in points:
        if obs.min_distance(pt) < clearance or _point_in_polygon(pt, poly):
            return False
    return True


def _sample_polygon(rng: np.random.Generator, cfg: EnvConfig) -> np.ndarray:
    kind = int(rng.integers(0, 3))
    center = rng.uniform(0.0, cfg.arena_side, size=2)
    lo, hi = cfg.obs_size_range
    if kind == 0:  # axis-aligned rectangle
        w, h = rng.uniform(lo, hi, size=2)
        dx, dy = w / 2.0, h / 2.0
        return center + np.array([[-dx, -dy], [dx, -dy], [dx, dy], [-dx, dy]])
    if kind == 1:  # rotated rectangle
        w, h = rng.uniform(lo, hi, size=2)
        ang = rng.uniform(0.0, math.pi)
        c, s = math.cos(ang), math.sin(ang)
        rot = np.array([[c, -s], [s, c]])
        dx, dy = w / 2.0, h / 2.0
        corners = np.array([[-dx, -dy], [dx, -dy], [dx, dy], [-dx, dy]])
        return center + corners @ rot.T
    radius = float(rng.uniform(lo, hi))  # circle as a regular 16-gon
    angles = 2.0 * math.pi * np.arange(N_CIRCLE_SIDES) / N_CIRCLE_SIDES
    return center + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def generate_environment(rng: np.random.Generator, cfg: EnvConfig,
                         max_tries_per_obstacle: int = 200) -> WorldState:
    """Sample a world: fixed start, goal on the +x axis, random obstacles.

    Obstacles are rejection-sampled until every segment keeps `clearance`
    meters from both the start and the goal (and contains neither point).
    """
    cfg.validate()
    start = np.array(cfg.start, dtype=float)
    d_g = float(rng.uniform(*cfg.d_g_range))
    goal = start + np.array([d_g, 0.0])
    lo, hi = cfg.n_obs_range
    n_obs = int(rng.integers(lo, hi + 1))

    keep_clear = [start, goal]
    polygons: list[np.ndarray] = []
    for _ in range(n_obs):
        for _attempt in range(max_tries_per_obstacle):
            poly = _sample_polygon(rng, cfg)
            if _polygon_clear_of(poly, keep_clear, cfg.clearance):
                polygons.append(poly)
                break
        else:
            raise GenerationError(
                f"no clear placement found after {max_tries_per_obstacle} tries "
                f"(clearance={cfg.clearance}, arena={cfg.arena_side})")

    walls = _wall_segments(cfg.arena_side) if cfg.include_walls else None
    obstacles = ObstacleSet.build(polygons, wall_segments=walls)
    return WorldState(drone_pos=start, goal_pos=goal, obstacles=obstacles)


# ---------------------------------------------------------------------------
# Scenario files: fixed worlds described as JSON (start, goal, polygons).

def load_scenario(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    for key in ("start", "goal", "polygons"):
        if key not in data:
            raise ScenarioError(f"{path}: missing required key '{key}'")
    for key in ("start", "goal"):
        if not (isinstance(data[key], list) and len(data[key]) == 2):
            raise ScenarioError(f"{path}: '{key}' must be [x, y]")
    for i, poly in enumerate(data["polygons"]):
        if len(poly) < 3 or any(len(v) != 2 for v in poly):
            raise ScenarioError(f"{path}: polygons[{i}] must list at least 3 [x, y] vertices")
    return data


def world_from_scenario(scenario: dict, cfg: EnvConfig) -> WorldState:
    polygons = [np.asarray(poly, dtype=float) for poly in scenario["polygons"]]
    walls = _wall_segments(cfg.arena_side) if cfg.include_walls else None
    obstacles = ObstacleSet.build(polygons, wall_segments=walls)
    return WorldState(
        drone_pos=np.asarray(scenario["start"], dtype=float),
        goal_pos=np.asarray(scenario["goal"], dtype=float),
        obstacles=obstacles,
    )


def scenario_from_world(state: WorldState) -> dict:
    return {
        "start": [float(x) for x in state.drone_pos],
        "goal": [float(x) for x in state.goal_pos],
        "polygons": [[[float(x), float(y)] for x, y in poly] for poly in state.obstacles.polygons],
    }

"""Deterministic multi-agent particle world with a pixel renderer.

Three task variants over a [-1, 1]^2 arena with double-integrator dynamics:

* ``coop_nav``       - N agents cover N landmarks, reward -sum of per-landmark
                       minimum agent distance.
* ``prey_predator``  - N predators chase N/3 scripted faster preys; +10 per
                       predator-prey contact, -5 per predator-predator contact,
                       shared across predators.
* ``coop_push``      - N agents push one heavy ball onto a landmark, reward
                       -dist(ball, landmark).

The rendered frame is the only observation the learning stack sees. Every
controllable agent gets its own color so the pixel pipeline can associate a
policy with its own tracked object; scripted preys share one color, landmarks
share one, the ball has its own.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np

from .kernels import physics_step, rasterize_frame

log = logging.getLogger(__name__)

TASKS = ("coop_nav", "prey_predator", "coop_push")

ACTIONS = ("noop", "up", "down", "left", "right")
N_ACTIONS = len(ACTIONS)
ACTION_DIRS = np.array(
    [[0.0, 0.0], [0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0]]
)

AGENT_VMAX = 1.0
PREY_SPEED_FACTOR = 1.3  # preys are faster than predators
BALL_MASS_RATIO = 4.0  # ball mass relative to an agent

# distinct role colors, pairwise L-inf separation > 2 * default tolerance
PALETTE = np.array(
    [
        (230, 60, 60),
        (60, 200, 60),
        (70, 90, 235),
        (230, 220, 50),
        (220, 60, 220),
        (60, 220, 220),
        (240, 150, 40),
        (150, 80, 240),
        (240, 240, 240),
        (130, 200, 120),
    ],
    dtype=np.uint8,
)

_SPAWN_LIMIT = 0.9
_MAX_SPAWN_TRIES = 100


@dataclass(frozen=True)
class TaskConfig:
    """Static description of one task instance."""

    task: str = "coop_nav"
    n_agents: int = 3
    episode_len: int = 25
    dt: float = 0.1
    accel_gain: float = 5.0
    damping: float = 0.5
    arena_half_extent: float = 1.0
    agent_radius: float = 0.06
    landmark_radius: float = 0.05
    prey_radius: float = 0.05
    ball_radius: float = 0.12
    image_size: int = 64
    seed: int = 0
    contact_stiffness: float = 100.0
    color_tolerance: int = 10

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.n_agents < 2:
            raise ValueError("n_agents must be >= 2")
        if self.task == "prey_predator" and self.n_agents % 3 != 0:
            raise ValueError("prey_predator needs n_agents divisible by 3")
        if self.episode_len < 1:
            raise ValueError("episode_len must be >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if self.image_size < 32:
            raise ValueError("image_size must be >= 32")
        for name, r in self.entity_radii.items():
            if not 0.0 < r < self.arena_half_extent:
                raise ValueError(f"radius {name}={r} outside (0, {self.arena_half_extent})")

    @property
    def entity_radii(self) -> dict:
        return {
            "agent": self.agent_radius,
            "landmark": self.landmark_radius,
            "prey": self.prey_radius,
            "ball": self.ball_radius,
        }


@dataclass(frozen=True)
class TaskLayout:
    """Per-entity constants derived from a TaskConfig (roles, radii, masses...)."""

    role_names: tuple
    role_colors: np.ndarray  # (R, 3) uint8
    entity_roles: np.ndarray  # (m,) int32
    controllable: np.ndarray  # (m,) bool
    scripted: np.ndarray  # (m,) bool, preys
    radii: np.ndarray  # (m,)
    vmax: np.ndarray  # (m,)
    accel: np.ndarray  # (m,) per-entity acceleration gain
    mass: np.ndarray  # (m,)
    movable: np.ndarray  # (m,) bool
    collidable: np.ndarray  # (m,) bool

    @property
    def n_entities(self) -> int:
        return len(self.entity_roles)

    @property
    def n_roles(self) -> int:
        return len(self.role_names)

    @property
    def role_census(self) -> np.ndarray:
        return np.bincount(self.entity_roles, minlength=self.n_roles).astype(np.int64)

    @cached_property
    def agent_idx(self) -> np.ndarray:
        return np.flatnonzero(self.controllable)

    @cached_property
    def prey_idx(self) -> np.ndarray:
        return np.flatnonzero(self.scripted)

    @cached_property
    def landmark_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.movable)


@lru_cache(maxsize=32)
def _layout_cached(task, n_agents, agent_r, landmark_r, prey_r, ball_r, accel_gain):
    n = n_agents
    names = [f"agent_{i}" for i in range(n)]
    roles = list(range(n))
    ctrl = [True] * n
    script = [False] * n
    radii = [agent_r] * n
    vmax = [AGENT_VMAX] * n
    accel = [accel_gain] * n
    mass = [1.0] * n
    movable = [True] * n
    collide = [True] * n

    if task == "coop_nav":
        names.append("landmark")
        for _ in range(n):
            roles.append(n)
            ctrl.append(False)
            script.append(False)
            radii.append(landmark_r)
            vmax.append(0.0)
            accel.append(0.0)
            mass.append(1.0)
            movable.append(False)
            collide.append(False)
    elif task == "prey_predator":
        names.append("prey")
        for _ in range(n // 3):
            roles.append(n)
            ctrl.append(False)
            script.append(True)
            radii.append(prey_r)
            vmax.append(AGENT_VMAX * PREY_SPEED_FACTOR)
            accel.append(accel_gain * PREY_SPEED_FACTOR)
            mass.append(1.0)
            movable.append(True)
            collide.append(True)
    else:  # coop_push
        names.extend(["ball", "landmark"])
        roles.append(n)
        ctrl.append(False)
        script.append(False)
        radii.append(ball_r)
        vmax.append(AGENT_VMAX)
        accel.append(0.0)
        mass.append(BALL_MASS_RATIO)
        movable.append(True)
        collide.append(True)
        roles.append(n + 1)
        ctrl.append(False)
        script.append(False)
        radii.append(landmark_r)
        vmax.append(0.0)
        accel.append(0.0)
        mass.append(1.0)
        movable.append(False)
        collide.append(False)

    n_roles = max(roles) + 1
    if n_roles > len(PALETTE):
        raise ValueError(f"{n_roles} roles exceed the {len(PALETTE)}-color palette")
    return TaskLayout(
        role_names=tuple(names),
        role_colors=PALETTE[:n_roles].copy(),
        entity_roles=np.array(roles, np.int32),
        controllable=np.array(ctrl),
        scripted=np.array(script),
        radii=np.array(radii),
        vmax=np.array(vmax),
        accel=np.array(accel),
        mass=np.array(mass),
        movable=np.array(movable),
        collidable=np.array(collide),
    )


def layout(cfg: TaskConfig) -> TaskLayout:
    return _layout_cached(
        cfg.task,
        cfg.n_agents,
        cfg.agent_radius,
        cfg.landmark_radius,
        cfg.prey_radius,
        cfg.ball_radius,
        cfg.accel_gain,
    )


@dataclass(frozen=True)
class EntityState:
    role: int
    position: np.ndarray
    velocity: np.ndarray
    controllable: bool


@dataclass
class WorldState:
    step_index: int
    positions: np.ndarray  # (m, 2)
    velocities: np.ndarray  # (m, 2)
    roles: np.ndarray  # (m,) int32
    controllable: np.ndarray  # (m,) bool

    @property
    def n_entities(self) -> int:
        return len(self.roles)

    @property
    def entities(self) -> list:
        return [
            EntityState(int(self.roles[i]), self.positions[i].copy(), self.velocities[i].copy(), bool(self.controllable[i]))
            for i in range(self.n_entities)
        ]


def reset(cfg: TaskConfig, rng: np.random.Generator) -> WorldState:
    """Place all entities uniformly in [-0.9, 0.9]^2 without overlap (best effort)."""
    lay = layout(cfg)
    m = lay.n_entities
    lim = _SPAWN_LIMIT * cfg.arena_half_extent
    pos = np.zeros((m, 2))
    for i in range(m):
        placed = False
        for _ in range(_MAX_SPAWN_TRIES):
            cand = rng.uniform(-lim, lim, 2)
            if i == 0:
                pos[i] = cand
                placed = True
                break
            gaps = np.hypot(*(pos[:i] - cand).T) - (lay.radii[:i] + lay.radii[i])
            if np.all(gaps > 0.0):
                pos[i] = cand
                placed = True
                break
        if not placed:
            pos[i] = rng.uniform(-lim, lim, 2)
            log.debug("spawn overlap fallback for entity %d after %d tries", i, _MAX_SPAWN_TRIES)
    return WorldState(
        step_index=0,
        positions=pos,
        velocities=np.zeros((m, 2)),
        roles=lay.entity_roles.copy(),
        controllable=lay.controllable.copy(),
    )


def _flee_directions(pos, lay):
    """Unit directions for scripted preys: descend summed inverse distance to predators."""
    prey_idx = lay.prey_idx
    pred_idx = lay.agent_idx
    dirs = np.zeros((len(prey_idx), 2))
    for j, p in enumerate(prey_idx):
        diff = pos[p] - pos[pred_idx]  # away from each predator
        d = np.hypot(diff[:, 0], diff[:, 1])
        d = np.maximum(d, 1e-9)
        grad = (diff / (d**3)[:, None]).sum(axis=0)
        norm = np.hypot(grad[0], grad[1])
        if norm > 1e-12:
            dirs[j] = grad / norm
    return prey_idx, dirs


def step(state: WorldState, actions: Sequence[int], cfg: TaskConfig, rng: np.random.Generator | None = None):
    """Advance one step; returns (new_state, per-agent rewards).

    Velocity update: v' = v*(1-damping) + accel*dt, plus soft contact impulses
    f = k*max(0, r_i+r_j-dist) along the separation direction, clipped to the
    per-role speed limit; positions clamp to the arena. Scripted preys flee
    down the summed inverse-distance potential to the predators.
    """
    lay = layout(cfg)
    n_agents = len(lay.agent_idx)
    if len(actions) != n_agents:
        raise ValueError(f"expected {n_agents} actions, got {len(actions)}")
    if state.step_index >= cfg.episode_len:
        raise ValueError("episode already finished")
    acts = np.asarray(actions, dtype=np.int64)
    if acts.size and (acts.min() < 0 or acts.max() >= N_ACTIONS):
        raise ValueError(f"actions must lie in [0, {N_ACTIONS})")

    pos = state.positions
    acc = np.zeros_like(pos)
    acc[lay.agent_idx] = ACTION_DIRS[acts] * lay.accel[lay.agent_idx, None]
    if len(lay.prey_idx):
        prey_idx, dirs = _flee_directions(pos, lay)
        acc[prey_idx] = dirs * lay.accel[prey_idx, None]

    new_pos, new_vel = physics_step(
        pos,
        state.velocities,
        acc,
        lay.radii,
        lay.vmax,
        lay.mass,
        lay.movable,
        lay.collidable,
        cfg.damping,
        cfg.dt,
        cfg.contact_stiffness,
        cfg.arena_half_extent,
    )

    rewards = np.full(n_agents, _shared_reward(new_pos, lay, cfg))
    new_state = WorldState(
        step_index=state.step_index + 1,
        positions=new_pos,
        velocities=new_vel,
        roles=state.roles,
        controllable=state.controllable,
    )
    return new_state, rewards


def _shared_reward(pos, lay: TaskLayout, cfg: TaskConfig) -> float:
    agent_idx = lay.agent_idx
    if cfg.task == "coop_nav":
        diff = pos[lay.landmark_idx][:, None, :] - pos[agent_idx][None, :, :]
        d = np.hypot(diff[:, :, 0], diff[:, :, 1])
        return float(-d.min(axis=1).sum())
    if cfg.task == "prey_predator":
        r = 0.0
        for p in lay.prey_idx:
            d = np.hypot(*(pos[agent_idx] - pos[p]).T)
            r += 10.0 * float((d <= lay.radii[agent_idx] + lay.radii[p]).sum())
        ap = pos[agent_idx]
        diff = ap[:, None, :] - ap[None, :, :]
        d = np.hypot(diff[:, :, 0], diff[:, :, 1])
        touch = d <= (lay.radii[agent_idx][:, None] + lay.radii[agent_idx][None, :])
        r -= 5.0 * float(np.triu(touch, k=1).sum())
        return r
    ball = int(np.flatnonzero(lay.entity_roles == cfg.n_agents)[0])
    lm = lay.n_entities - 1
    return float(-np.hypot(*(pos[ball] - pos[lm])))


def world_to_pixel(coords: np.ndarray, cfg: TaskConfig) -> np.ndarray:
    """Map world (x, y) in [-e, e] to integer (col, row); y=-e is the top row."""
    size = cfg.image_size
    scaled = (coords / cfg.arena_half_extent + 1.0) / 2.0 * (size - 1)
    return np.floor(scaled + 0.5).astype(np.int64)


def pixel_to_world(px: np.ndarray, cfg: TaskConfig) -> np.ndarray:
    """Inverse of world_to_pixel on (col, row) pixel coordinates (floats ok)."""
    size = cfg.image_size
    return (np.asarray(px, dtype=np.float64) / (size - 1) * 2.0 - 1.0) * cfg.arena_half_extent


def render(state: WorldState, cfg: TaskConfig) -> np.ndarray:
    """Rasterize all entities as filled role-colored discs on black, list order on top."""
    lay = layout(cfg)
    frame = np.zeros((cfg.image_size, cfg.image_size, 3), np.uint8)
    if state.n_entities == 0:
        return frame
    px = world_to_pixel(state.positions, cfg)
    radii_px = lay.radii * (cfg.image_size - 1) / (2.0 * cfg.arena_half_extent)
    colors = lay.role_colors[state.roles]
    rasterize_frame(frame, np.ascontiguousarray(px[:, 1]), np.ascontiguousarray(px[:, 0]), radii_px, colors)
    return frame


def write_ppm(frame: np.ndarray, path) -> None:
    """Debug dump of a frame as binary PPM."""
    h, w = frame.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(frame.astype(np.uint8).tobytes())

"""Discrete driving grid world shared by the planner and the driver model.

State is (p, y, v): longitudinal cell, lane, speed. Both players pick one of
six actions per step; speed deltas add, lane deltas add, stop zeroes the
speed. Position advances by the post-update speed. Out-of-bounds attempts
are clamped but still penalized as collisions.
"""
import json
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache

import numpy as np


class Action(IntEnum):
    KEEP = 0
    ACCEL = 1
    DECEL = 2
    LEFT = 3
    RIGHT = 4
    STOP = 5


ACTION_NAMES = [a.name.lower() for a in Action]
N_ACTIONS = 6

# speed / lane deltas per action, indexed by Action value
DV = (0, 1, -1, 0, 0, 0)
DY = (0, 0, 0, 1, -1, 0)


@dataclass(frozen=True)
class VehicleState:
    p: int
    y: int
    v: int

    def as_tuple(self):
        return (self.p, self.y, self.v)


@dataclass(frozen=True)
class DecisionSchedule:
    """Binary mask over the horizon: 1 where the driver acts freely."""
    mask: tuple

    def __post_init__(self):
        if not all(m in (0, 1) for m in self.mask):
            raise ValueError("schedule entries must be 0 or 1")
        k = sum(self.mask)
        if k < 1:
            raise ValueError("driver must decide at least once")
        # single-stage games are fully driver-active by construction
        if len(self.mask) > 1 and k >= len(self.mask):
            raise ValueError("schedule must mix decision and no-decision steps")

    def __len__(self):
        return len(self.mask)

    def __getitem__(self, t):
        return self.mask[t]

    @property
    def n_decisions(self):
        return sum(self.mask)


@dataclass(frozen=True)
class Scenario:
    """Grid geometry plus the episode-level planning constants."""
    P: int = 10
    L: int = 3
    V: int = 3
    obstacles: tuple = ((4, 0), (5, 1))
    goal: tuple = (9, 0, 0)
    goal_reward: float = 5.0
    T: int = 5
    sigma: DecisionSchedule = field(default_factory=lambda: DecisionSchedule((1, 0, 0, 1, 0)))
    rationality: float = 10.0
    gamma: float = 1.0
    max_episode_steps: int = 30

    def __post_init__(self):
        if len(self.sigma) != self.T:
            raise ValueError("schedule length must equal the horizon")
        for (op, oy) in self.obstacles:
            if not (0 <= op < self.P and 0 <= oy < self.L):
                raise ValueError(f"obstacle ({op},{oy}) outside the grid")
        gp, gy, gv = self.goal
        if not (0 <= gp < self.P and 0 <= gy < self.L and 0 <= gv < self.V):
            raise ValueError("goal outside the grid")

    @property
    def n_states(self):
        return self.P * self.L * self.V

    def encode(self, p, y, v):
        return (p * self.L + y) * self.V + v

    def decode(self, sid):
        sid, v = divmod(sid, self.V)
        p, y = divmod(sid, self.L)
        return (p, y, v)

    def to_dict(self):
        return {
            "grid": {"P": self.P, "L": self.L, "V": self.V},
            "obstacles": [list(o) for o in self.obstacles],
            "goal": list(self.goal),
            "goal_reward": self.goal_reward,
            "T": self.T,
            "sigma": list(self.sigma.mask),
            "lambda": self.rationality,
            "gamma": self.gamma,
            "max_episode_steps": self.max_episode_steps,
        }

    @classmethod
    def from_dict(cls, d):
        g = d["grid"]
        return cls(
            P=int(g["P"]), L=int(g["L"]), V=int(g["V"]),
            obstacles=tuple((int(p), int(y)) for p, y in d["obstacles"]),
            goal=tuple(int(c) for c in d["goal"]),
            goal_reward=float(d["goal_reward"]),
            T=int(d["T"]),
            sigma=DecisionSchedule(tuple(int(s) for s in d["sigma"])),
            rationality=float(d["lambda"]),
            gamma=float(d["gamma"]),
            max_episode_steps=int(d["max_episode_steps"]),
        )

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def transition(scn: Scenario, state, uL, uF):
    """Joint dynamics. Returns the next (p, y, v) tuple."""
    p, y, v = state
    if uL == Action.STOP or uF == Action.STOP:
        v2 = 0
    else:
        v2 = min(max(v + DV[uL] + DV[uF], 0), scn.V - 1)
    y_raw = y + DY[uL] + DY[uF]
    y2 = min(max(y_raw, 0), scn.L - 1)
    p_raw = p + v2
    p2 = min(max(p_raw, 0), scn.P - 1)
    return (p2, y2, v2)


@dataclass(frozen=True)
class DriverTypeParams:
    """Cost weights for one driver type.

    c1: (progress, lane-offset) pull toward the goal
    c2: (p-weight, y-weight, scale) of the obstacle barrier
    c3: collision / out-of-bounds penalty
    c4: lane-change penalty
    """
    c1: tuple
    c2: tuple
    c3: float
    c4: float


DRIVER_PRESETS = {
    1: DriverTypeParams(c1=(0.5, 0.01), c2=(0.5, 1.0, 1.5), c3=10.0, c4=0.0),
    2: DriverTypeParams(c1=(1.0, 0.1), c2=(1.0, 2.0, 1.5), c3=10.0, c4=0.0),
    3: DriverTypeParams(c1=(1.5, 0.1), c2=(1.5, 2.5, 1.5), c3=10.0, c4=0.0),
    4: DriverTypeParams(c1=(0.5, 0.0), c2=(0.5, 0.6, 1.5), c3=10.0, c4=1.0),
    5: DriverTypeParams(c1=(0.5, 0.01), c2=(0.5, 0.5, 1.5), c3=10.0, c4=1.0),
}

TYPE_WEIGHTS = {1: 0.2, 2: 0.3, 3: 0.1, 4: 0.2, 5: 0.2}

BARRIER_EPS = 0.1


def stage_cost_terms(scn: Scenario, params: DriverTypeParams, state, uL, uF):
    """The four cost pieces (z1..z4), all evaluated at the landed state."""
    p, y, v = state
    if uL == Action.STOP or uF == Action.STOP:
        v2 = 0
    else:
        v2 = min(max(v + DV[uL] + DV[uF], 0), scn.V - 1)
    dy = DY[uL] + DY[uF]
    y_raw = y + dy
    y2 = min(max(y_raw, 0), scn.L - 1)
    p_raw = p + v2
    p2 = min(max(p_raw, 0), scn.P - 1)

    gp, gy, _ = scn.goal
    z1 = params.c1[0] * abs(p2 - gp) + params.c1[1] * abs(y2 - gy)

    if scn.obstacles:
        d = min(params.c2[0] * abs(p2 - op) + params.c2[1] * abs(y2 - oy)
                for op, oy in scn.obstacles)
        # log barrier on the nearest obstacle, active only inside unit
        # weighted distance; the floor keeps every stage utility <= 0 so
        # parking far from obstacles never beats finishing
        z2 = max(-params.c2[2] * np.log(max(d, BARRIER_EPS)), 0.0)
    else:
        z2 = 0.0

    hit = (p2, y2) in scn.obstacles or y_raw != y2 or p_raw != p2
    z3 = params.c3 if hit else 0.0
    z4 = params.c4 if dy != 0 else 0.0
    return z1, z2, z3, z4


def stage_utility(scn, params, state, uL, uF):
    """Driver's per-step utility, the negated total cost."""
    return -sum(stage_cost_terms(scn, params, state, uL, uF))


@lru_cache(maxsize=None)
def successor_table(scn: Scenario):
    """(n, 6, 6) int array of next-state ids for every (state, uL, uF)."""
    n = scn.n_states
    out = np.empty((n, N_ACTIONS, N_ACTIONS), dtype=np.int64)
    for sid in range(n):
        x = scn.decode(sid)
        for a in range(N_ACTIONS):
            for b in range(N_ACTIONS):
                out[sid, a, b] = scn.encode(*transition(scn, x, a, b))
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def utility_table(scn: Scenario, params: DriverTypeParams):
    """(n, 6, 6) array of stage utilities for every (state, uL, uF)."""
    n = scn.n_states
    out = np.empty((n, N_ACTIONS, N_ACTIONS))
    for sid in range(n):
        x = scn.decode(sid)
        for a in range(N_ACTIONS):
            for b in range(N_ACTIONS):
                out[sid, a, b] = stage_utility(scn, params, x, a, b)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def terminal_reward(scn: Scenario):
    """(n,) terminal payoff: goal_reward on the exact goal state, else 0."""
    out = np.zeros(scn.n_states)
    out[scn.encode(*scn.goal)] = scn.goal_reward
    out.flags.writeable = False
    return out


def reachable_sets(scn: Scenario, sid0: int, depth: int):
    """Forward-reachable state ids per step: list of sorted arrays, len depth+1."""
    succ = successor_table(scn)
    cur = np.array([sid0], dtype=np.int64)
    out = [cur]
    for _ in range(depth):
        cur = np.unique(succ[cur])
        out.append(cur)
    return out

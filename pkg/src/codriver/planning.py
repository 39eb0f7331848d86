"""Receding-horizon shared control.

Each real step the assistant solves the game on the states reachable within
the lookahead horizon, announces its stage-0 mixed strategy, and both sides
sample an action: the simulated driver replies to the whole announced
trajectory with her own ground-truth utility, while quiet steps pin her to
keep. The assistant's reply prediction is logged for display but never
drives the vehicle.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .game import follower_response_trajectory, solve_fse
from .gridworld import (
    Action,
    DecisionSchedule,
    DriverTypeParams,
    N_ACTIONS,
    Scenario,
    reachable_sets,
    successor_table,
    utility_table,
)


@dataclass
class SimulatedDriver:
    """Logit driver with optional forced actions at specific states."""
    params: DriverTypeParams
    rationality: float = 10.0
    seed: int = 0
    overrides: tuple = ()

    def __post_init__(self):
        # key the stream so driver and planner never alias even when a run
        # hands both sides the same integer seed
        self.rng = np.random.default_rng([int(self.seed), 1])
        self.overrides = tuple((tuple(st), int(a)) for st, a in self.overrides)


def driver_act(driver: SimulatedDriver, x, policy):
    """Sample the driver's action, unless an override pins this state."""
    x = tuple(x)
    for st, act in driver.overrides:
        if st == x:
            return int(act)
    return int(driver.rng.choice(N_ACTIONS, p=policy))


@dataclass
class StepRecord:
    t: int
    x: tuple
    uL: int
    uF: int
    announced: np.ndarray
    driver_policy: np.ndarray
    predicted: np.ndarray
    reward: float
    total: float


@dataclass
class EpisodeLog:
    x0: tuple
    mode: str
    sigma_mode: str
    steps: list = field(default_factory=list)
    reached_goal: bool = False

    @property
    def rewards(self):
        return [s.total for s in self.steps]


def rotated_scenario(scn: Scenario, k: int):
    """Lookahead schedule for real time k in absolute alignment: stage tau
    of the prediction carries sigma((k + tau) mod T)."""
    shift = k % scn.T
    mask = tuple(scn.sigma.mask[(shift + i) % scn.T] for i in range(scn.T))
    if mask == tuple(scn.sigma.mask):
        return scn
    return replace(scn, sigma=DecisionSchedule(mask))


def keep_announcement(scn: Scenario):
    tab = np.zeros((scn.T, scn.n_states, N_ACTIONS))
    tab[:, :, Action.KEEP] = 1.0
    return tab


def plan_step(gL, scn: Scenario, sid: int, k: int, mode: str, sigma_mode: str):
    """One receding-horizon planning pass at state sid and real time k.

    Returns (announced (T,n,6), solution or None, lookahead scenario).
    shared mode solves the game on the BFS-reachable tube; driver_only
    announces the constant keep policy and solves nothing.
    """
    look = scn if sigma_mode == "replan_relative" else rotated_scenario(scn, k)
    if mode == "driver_only":
        return keep_announcement(look), None, look
    layers = reachable_sets(look, sid, look.T)
    sol = solve_fse(look, gL, states_per_t=layers[: look.T])
    return np.array(sol.leader), sol, look


def receding_horizon_drive(gL, driver: SimulatedDriver, x0, scn: Scenario,
                           mode="shared", sigma_mode="replan_relative",
                           planner_seed=0):
    """Run one episode to the goal or the step budget.

    gL: (n, 6, 6) utility table the assistant plans with (its driver model
    and its own objective). The driver replies with her own utility and
    rationality; her decisions happen where the lookahead's stage 0 is
    active, everything else applies keep.
    """
    if mode not in ("shared", "driver_only"):
        raise ValueError(f"unknown mode {mode!r}")
    if sigma_mode not in ("replan_relative", "absolute"):
        raise ValueError(f"unknown sigma mode {sigma_mode!r}")
    rng = np.random.default_rng([int(planner_seed), 0])
    succ = successor_table(scn)
    gF_true = np.asarray(utility_table(scn, driver.params))
    sid = scn.encode(*x0)
    log = EpisodeLog(x0=tuple(x0), mode=mode, sigma_mode=sigma_mode)
    goal_sid = scn.encode(*scn.goal)
    if sid == goal_sid:
        log.reached_goal = True
        return log
    total = 0.0
    for k in range(scn.max_episode_steps):
        announced, sol, look = plan_step(gL, scn, sid, k, mode, sigma_mode)
        drv_look = look if driver.rationality == look.rationality else \
            replace(look, rationality=driver.rationality)
        resp, _, _ = follower_response_trajectory(gF_true, announced,
                                                  drv_look, [sid])
        yL0 = announced[0, sid]
        yF0 = resp[0, sid]
        predicted = None if sol is None else np.array(sol.follower[0, sid])
        uL = int(rng.choice(N_ACTIONS, p=yL0))
        if look.sigma[0]:
            uF = driver_act(driver, scn.decode(sid), yF0)
        else:
            uF = int(Action.KEEP)
        reward = float(gF_true[sid, uL, uF])
        total += reward
        log.steps.append(StepRecord(t=k, x=tuple(scn.decode(sid)), uL=uL,
                                    uF=uF, announced=yL0.copy(),
                                    driver_policy=yF0.copy(),
                                    predicted=predicted, reward=reward,
                                    total=total))
        sid = int(succ[sid, uL, uF])
        if sid == goal_sid:
            log.reached_goal = True
            break
    return log


def evaluate_episode(log: EpisodeLog):
    curve = log.rewards
    return {
        "steps_to_goal": len(log.steps) if log.reached_goal else None,
        "reached_goal": log.reached_goal,
        "final_reward": curve[-1] if curve else 0.0,
        "reward_curve": curve,
    }


def episode_to_dict(log: EpisodeLog, scn: Scenario, driver_type=None):
    """Full episode record for the JSON artifact."""
    def vec(v):
        return None if v is None else [float(x) for x in v]

    return {
        "scenario": scn.to_dict(),
        "mode": log.mode,
        "sigma_mode": log.sigma_mode,
        "driver_type": driver_type,
        "x0": list(log.x0),
        "steps": [{
            "t": s.t, "x": list(s.x), "uL": int(s.uL), "uF": int(s.uF),
            "announced": vec(s.announced),
            "driver_policy": vec(s.driver_policy),
            "predicted": vec(s.predicted),
            "reward": s.reward, "total": s.total,
        } for s in log.steps],
        "summary": evaluate_episode(log),
    }


def render_episode_svg(log: EpisodeLog, scn: Scenario):
    """Plain grid rendering: obstacles, goal, and one arrow per visited
    state whose length encodes the speed (a dot for standstill)."""
    cell = 48
    pad = 6
    w = scn.P * cell
    h = scn.L * cell
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" '
           f'viewBox="0 0 {w} {h}" width="{w}" height="{h}">']
    out.append(f'<rect width="{w}" height="{h}" fill="#f8f8f4"/>')
    for p in range(scn.P):
        for lane in range(scn.L):
            x, y = p * cell, (scn.L - 1 - lane) * cell
            fill = "#f8f8f4"
            if (p, lane) in scn.obstacles:
                fill = "#555"
            if (p, lane) == scn.goal[:2]:
                fill = "#bde5bd"
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}"'
                       f' fill="{fill}" stroke="#999"/>')
    pts = [s.x for s in log.steps]
    if log.reached_goal:
        pts = pts + [scn.goal]
    for i, (p, lane, v) in enumerate(pts):
        cx = p * cell + cell / 2
        cy = (scn.L - 1 - lane) * cell + cell / 2
        if v == 0:
            out.append(f'<circle cx="{cx}" cy="{cy}" r="4" fill="#c33"/>')
        else:
            ln = (cell / 2 - pad) * v / max(1, scn.V - 1)
            out.append(f'<line x1="{cx - ln / 2}" y1="{cy}" '
                       f'x2="{cx + ln / 2}" y2="{cy}" stroke="#c33" '
                       f'stroke-width="3" marker-end="url(#tip)"/>')
        out.append(f'<text x="{cx}" y="{cy - 8}" font-size="9" '
                   f'text-anchor="middle" fill="#333">{i}</text>')
    out.insert(1, '<defs><marker id="tip" markerWidth="6" markerHeight="6" '
               'refX="5" refY="3" orient="auto"><path d="M0,0 L6,3 L0,6 z" '
               'fill="#c33"/></marker></defs>')
    out.append("</svg>")
    return "".join(out)

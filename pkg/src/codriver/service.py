"""Interactive shared-control sessions over HTTP.

A human plays the follower against the planning stack. Per session the
service re-solves the lookahead game each real step, announces the stage-0
mixed strategy, samples its own action from it, and waits for the human
exactly at the schedule's decision steps; quiet steps auto-apply keep. The
log uses the same step records the batch planner writes, so an episode
driven over the API is comparable to one from the command line, and the
accumulated choice history can be fed back through utility adaptation to
mint a personalized table for later sessions.

Everything is in memory: registries of scenarios and utility tables, plus
the live sessions. One lock per session keeps stepping linearizable;
competing writers are bounced, never queued.
"""
import itertools
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .gridworld import Action, N_ACTIONS, Scenario, successor_table
from .learning import (
    Dataset,
    LearnConfig,
    Sample,
    StrategyPair,
    adapt_driver,
    load_utility_json,
)
from .planning import EpisodeLog, StepRecord, episode_to_dict, plan_step

SIGMA_MODES = ("absolute", "replan_relative")


class ApiError(Exception):
    """HTTP error carrier: status class plus a stable machine-readable code."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class Session:
    id: str
    scenario_ref: str
    utility_ref: str
    scn: Scenario
    table: np.ndarray
    sigma_mode: str
    seed: int
    rng: np.random.Generator
    succ: np.ndarray
    sid: int
    log: EpisodeLog
    k: int = 0
    # one record per applied or pending-free step: (k, sid, yL row, uF|None)
    history: list = field(default_factory=list)
    pending: dict = None
    finished: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)


def _keep_row():
    row = np.zeros(N_ACTIONS)
    row[Action.KEEP] = 1.0
    return row


def _one_hot(a: int):
    row = np.zeros(N_ACTIONS)
    row[a] = 1.0
    return row


def _apply_step(s: Session, uL, uF, yL0, driver_row, predicted, decision):
    reward = float(s.table[s.sid, uL, uF])
    total = (s.log.steps[-1].total if s.log.steps else 0.0) + reward
    s.log.steps.append(StepRecord(
        t=s.k, x=tuple(s.scn.decode(s.sid)), uL=uL, uF=uF,
        announced=yL0.copy(), driver_policy=driver_row,
        predicted=predicted, reward=reward, total=total))
    s.history.append((s.k, s.sid, yL0.copy(), uF if decision else None))
    s.sid = int(s.succ[s.sid, uL, uF])
    s.k += 1


def _advance(s: Session):
    """Run forward to the next human decision point, the goal, or the step
    budget. Quiet steps pin the driver to keep; the planner's action is
    sampled once per step, at announcement time, so a decision point holds
    a committed intent for the what-if preview and the eventual joint step.
    """
    goal_sid = s.scn.encode(*s.scn.goal)
    s.pending = None
    while True:
        if s.sid == goal_sid:
            s.log.reached_goal = True
            s.finished = True
            return
        if s.k >= s.scn.max_episode_steps:
            s.finished = True
            return
        announced, sol, look = plan_step(s.table, s.scn, s.sid, s.k,
                                         "shared", s.sigma_mode)
        yL0 = announced[0, s.sid]
        uL = int(s.rng.choice(N_ACTIONS, p=yL0))
        predicted = np.array(sol.follower[0, s.sid])
        if look.sigma[0]:
            s.pending = {"announced": yL0.copy(), "predicted": predicted,
                         "intent": uL, "VL1": np.array(sol.VL[1])}
            return
        _apply_step(s, uL, int(Action.KEEP), yL0, _keep_row(), predicted,
                    decision=False)


def history_samples(s: Session):
    """Chop the step history into horizon-sized windows shaped like the
    batch datasets: window w roots at real time w*T, records keep stage
    index k mod T, quiet steps carry no action."""
    T = s.scn.T
    windows = {}
    for k, sid, yl, uf in s.history:
        windows.setdefault(k // T, []).append(StrategyPair(k % T, sid, yl, uf))
    out = []
    for w in sorted(windows):
        first = windows[w][0]
        out.append(Sample(root=tuple(s.scn.decode(first.sid)),
                          pairs=windows[w]))
    return out


def _pair_docs(s: Session):
    T = s.scn.T
    return [{"k": k, "t": k % T, "x": list(map(int, s.scn.decode(sid))),
             "yL": [float(v) for v in yl], "uF": uf}
            for k, sid, yl, uf in s.history]


def _summary_doc(s: Session):
    return {
        "session_id": s.id,
        "scenario": s.scenario_ref,
        "utility": s.utility_ref,
        "mode": s.sigma_mode,
        "t": s.k,
        "x": list(map(int, s.scn.decode(s.sid))),
        "awaiting": "none" if s.finished else "driver_action",
        "finished": s.finished,
        "reached_goal": s.log.reached_goal,
    }


def _state_doc(s: Session):
    pend = s.pending
    doc = _summary_doc(s)
    doc.update({
        "seed": s.seed,
        "announced": None if pend is None
        else [float(v) for v in pend["announced"]],
        "predicted": None if pend is None
        else [float(v) for v in pend["predicted"]],
        "history": _pair_docs(s),
        "episode": episode_to_dict(s.log, s.scn),
    })
    return doc


def _parse_action(body):
    a = body.get("action")
    if isinstance(a, bool):
        raise ApiError(400, "invalid_action", "action must be a name or index")
    if isinstance(a, int):
        if 0 <= a < N_ACTIONS:
            return a
        raise ApiError(400, "invalid_action", f"action index {a} out of range")
    if isinstance(a, str):
        try:
            return int(Action[a.upper()])
        except KeyError:
            raise ApiError(400, "invalid_action", f"unknown action {a!r}")
    raise ApiError(400, "invalid_action", "body must carry an 'action' field")


def _load_table(v):
    if isinstance(v, (str, Path)):
        table, _ = load_utility_json(v)
        return table
    return np.asarray(v, dtype=float)


def create_app(tables=None, scenarios=None, default_utility=None,
               default_scenario="default", static_dir=None):
    """Build the session service around in-memory registries.

    tables: {ref: (n,6,7) array or saved-table JSON path}; falls back to a
    single zero table, enough to click through a session. scenarios:
    {ref: Scenario or its full dict form}; "default" is always present.
    static_dir, when it exists, is mounted at / to serve the built UI.
    """
    scns = {"default": Scenario()}
    for ref, v in (scenarios or {}).items():
        scns[ref] = v if isinstance(v, Scenario) else Scenario.from_dict(v)
    if default_scenario not in scns:
        raise ValueError(f"unknown default scenario {default_scenario!r}")
    tabs = {ref: _load_table(v) for ref, v in (tables or {}).items()}
    if not tabs:
        n = scns[default_scenario].n_states
        tabs["zero"] = np.zeros((n, N_ACTIONS, N_ACTIONS))
    if default_utility is None:
        default_utility = next(iter(tabs))
    if default_utility not in tabs:
        raise ValueError(f"unknown default utility {default_utility!r}")

    sessions = {}
    registry_lock = threading.Lock()
    session_ids = itertools.count(1)
    table_ids = itertools.count(1)

    app = FastAPI(title="shared-control sessions")
    app.state.scenarios = scns
    app.state.tables = tabs
    app.state.sessions = sessions

    @app.exception_handler(ApiError)
    def _api_error(request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    def fetch(session_id) -> Session:
        with registry_lock:
            s = sessions.get(session_id)
        if s is None:
            raise ApiError(404, "unknown_session", f"no session {session_id!r}")
        return s

    def check_fields(body, allowed):
        unknown = set(body) - allowed
        if unknown:
            raise ApiError(400, "invalid_request",
                           f"unknown fields {sorted(unknown)}")

    @app.post("/sessions", status_code=201)
    def create_session(payload: dict = Body(None)):
        body = payload or {}
        check_fields(body, {"scenario", "utility", "mode", "x0", "seed"})
        scn_ref = body.get("scenario", default_scenario)
        if scn_ref not in scns:
            raise ApiError(404, "unknown_scenario", f"no scenario {scn_ref!r}")
        scn = scns[scn_ref]
        util_ref = body.get("utility", default_utility)
        if util_ref not in tabs:
            raise ApiError(404, "unknown_utility", f"no utility {util_ref!r}")
        table = tabs[util_ref]
        if table.shape != (scn.n_states, N_ACTIONS, N_ACTIONS):
            raise ApiError(400, "shape_mismatch",
                           f"table {util_ref!r} does not fit {scn_ref!r}")
        mode = body.get("mode", "absolute")
        if mode not in SIGMA_MODES:
            raise ApiError(400, "invalid_mode", f"mode must be one of {SIGMA_MODES}")
        x0 = body.get("x0", [0, 0, 0])
        try:
            p, y, v = (int(c) for c in x0)
        except (TypeError, ValueError):
            raise ApiError(400, "invalid_x0", "x0 must be three integers")
        if not (0 <= p < scn.P and 0 <= y < scn.L and 0 <= v < scn.V):
            raise ApiError(400, "invalid_x0", f"x0 {list(x0)} outside the grid")
        seed = body.get("seed")
        if seed is None:
            seed = int(np.random.default_rng().integers(2 ** 31 - 1))
        elif isinstance(seed, bool) or not isinstance(seed, int):
            raise ApiError(400, "invalid_seed", "seed must be an integer")
        with registry_lock:
            sid_str = f"s{next(session_ids)}"
        s = Session(
            id=sid_str, scenario_ref=scn_ref, utility_ref=util_ref, scn=scn,
            table=table, sigma_mode=mode, seed=seed,
            rng=np.random.default_rng(seed), succ=successor_table(scn),
            sid=scn.encode(p, y, v),
            log=EpisodeLog(x0=(p, y, v), mode="shared", sigma_mode=mode))
        _advance(s)
        with registry_lock:
            sessions[sid_str] = s
        return _state_doc(s)

    @app.get("/sessions")
    def list_sessions():
        with registry_lock:
            snap = list(sessions.values())
        out = []
        for s in snap:
            with s.lock:
                out.append(_summary_doc(s))
        return {"sessions": out}

    @app.get("/sessions/{session_id}")
    def get_state(session_id: str):
        s = fetch(session_id)
        with s.lock:
            return _state_doc(s)

    @app.post("/sessions/{session_id}/action")
    def submit_action(session_id: str, payload: dict = Body(None)):
        s = fetch(session_id)
        body = payload or {}
        check_fields(body, {"action"})
        a = _parse_action(body)
        if not s.lock.acquire(blocking=False):
            raise ApiError(409, "busy", "another update is in flight")
        try:
            if s.finished:
                raise ApiError(409, "finished",
                               "session is finished; no action awaited")
            pend = s.pending
            _apply_step(s, pend["intent"], a, pend["announced"], _one_hot(a),
                        pend["predicted"], decision=True)
            _advance(s)
            return _state_doc(s)
        finally:
            s.lock.release()

    @app.get("/sessions/{session_id}/assist")
    def get_assistance(session_id: str):
        s = fetch(session_id)
        with s.lock:
            if s.finished:
                raise ApiError(409, "finished", "session is finished")
            pend = s.pending
            what_if = []
            for a in range(N_ACTIONS):
                nxt = int(s.succ[s.sid, pend["intent"], a])
                what_if.append({
                    "action": Action(a).name.lower(),
                    "x": list(map(int, s.scn.decode(nxt))),
                    "value": float(pend["VL1"][nxt]),
                })
            return {
                "session_id": s.id,
                "t": s.k,
                "x": list(map(int, s.scn.decode(s.sid))),
                "intent": int(pend["intent"]),
                "announced": [float(v) for v in pend["announced"]],
                "predicted": [float(v) for v in pend["predicted"]],
                "what_if": what_if,
            }

    @app.post("/sessions/{session_id}/adapt")
    def adapt_from_session(session_id: str, payload: dict = Body(None)):
        s = fetch(session_id)
        body = payload or {}
        check_fields(body, {"seed", "adapt_iters", "adapt_sample_size",
                            "alpha"})
        kw = {}
        for key in ("seed", "adapt_iters", "adapt_sample_size"):
            if key in body:
                val = body[key]
                if isinstance(val, bool) or not isinstance(val, int):
                    raise ApiError(400, "invalid_request",
                                   f"{key} must be an integer")
                kw[key] = val
        if "alpha" in body:
            kw["alpha"] = float(body["alpha"])
        cfg = LearnConfig(**kw)
        if not s.lock.acquire(blocking=False):
            raise ApiError(409, "busy", "another update is in flight")
        try:
            n_active = sum(1 for _, _, _, uf in s.history if uf is not None)
            if n_active == 0:
                raise ApiError(409, "no_decisions",
                               "history holds no driver decisions")
            ds = Dataset(driver_type=0, samples=history_samples(s))
            g = adapt_driver(s.table, ds, s.scn, cfg)
        finally:
            s.lock.release()
        with registry_lock:
            # launch-time registrations may already hold adaptedN names
            ref = f"adapted{next(table_ids)}"
            while ref in tabs:
                ref = f"adapted{next(table_ids)}"
            tabs[ref] = g
        return {"utility": ref, "base": s.utility_ref, "session": s.id,
                "pairs": n_active, "adapt_iters": cfg.adapt_iters,
                "seed": cfg.seed}

    @app.delete("/sessions/{session_id}")
    def delete_session(session_id: str):
        with registry_lock:
            s = sessions.pop(session_id, None)
        if s is None:
            raise ApiError(404, "unknown_session", f"no session {session_id!r}")
        return {"deleted": session_id}

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True),
                  name="ui")
    return app

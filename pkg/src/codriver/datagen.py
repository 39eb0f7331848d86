"""Synthetic driver-response data.

Announced leader policies (random or perturbed-equilibrium), simulated logit
drivers responding to them, and the JSONL dataset files the learning loop
consumes. A sample records the whole decision tree reachable under the
announced mixed strategy and the driver's sampled choices, plus one rolled
path for episode-style replay.
"""
import json
from dataclasses import dataclass

import numpy as np

from .game import follower_response_trajectory, solve_fse
from .gridworld import (
    Action,
    DriverTypeParams,
    N_ACTIONS,
    DRIVER_PRESETS,
    Scenario,
    successor_table,
    utility_table,
)
from .learning import Dataset, Sample, StrategyPair


@dataclass
class PolicyGenSpec:
    mode: str = "dirichlet_random"
    count: int = 8
    scale: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("dirichlet_random", "perturbed_dp"):
            raise ValueError(f"unknown policy mode {self.mode!r}")
        if self.count < 1:
            raise ValueError("count must be >= 1")


def gen_leader_policies(spec: PolicyGenSpec, scn: Scenario):
    """Announced-strategy trajectories for data collection, (T, n, 6) each.

    dirichlet_random draws an independent flat-Dirichlet simplex per (t, x).
    perturbed_dp solves the game under a noise-perturbed utility table and
    mixes every stage policy with uniform, weight = scale; scale 0 is the
    unperturbed equilibrium announcement and scale 1 is uniform everywhere.
    Collecting responses does not need optimal leader play, so both modes
    are fair game.
    """
    rng = np.random.default_rng(spec.seed)
    n, T = scn.n_states, scn.T
    out = []
    if spec.mode == "dirichlet_random":
        for _ in range(spec.count):
            out.append(rng.dirichlet(np.ones(N_ACTIONS), size=(T, n)))
        return out
    base = utility_table(scn, DRIVER_PRESETS[1])
    for _ in range(spec.count):
        noisy = base + spec.scale * rng.normal(size=base.shape)
        sol = solve_fse(scn, noisy)
        yl = np.array(sol.leader)
        mixed = (1.0 - spec.scale) * yl + spec.scale / N_ACTIONS
        out.append(mixed)
    return out


def default_x0_pool(scn: Scenario):
    """Stationary starts at the road entry: every lane with p=0, v=0."""
    return [(0, lane, 0) for lane in range(scn.L)]


def collect_dataset(theta: DriverTypeParams, policies, n_samples, x0_pool,
                    scn: Scenario, seed, type_id=0):
    """Simulate a logit driver against announced policies.

    Per sample: pick a policy and a start, compute the driver's exact reply
    trajectory under the ground-truth utility, then walk the reachable tree;
    decision stages sample one action from the reply simplex per visited
    state, quiet stages record no choice. One path through the tree (leader
    actions sampled from the announcement) is kept for replay.
    """
    if not policies:
        raise ValueError("need at least one announced policy")
    rng = np.random.default_rng(seed)
    gF = utility_table(scn, theta)
    succ = successor_table(scn)
    responses = {}
    samples = []
    for _ in range(n_samples):
        pidx = int(rng.integers(len(policies)))
        announced = policies[pidx]
        x0 = x0_pool[int(rng.integers(len(x0_pool)))]
        sid0 = scn.encode(*x0)
        if (pidx, sid0) not in responses:
            responses[(pidx, sid0)] = follower_response_trajectory(
                gF, announced, scn, [sid0])
        yF, _, _ = responses[(pidx, sid0)]
        pairs = []
        chosen = {}
        layer = [sid0]
        for t in range(scn.T):
            nxt = set()
            for sid in layer:
                if scn.sigma[t]:
                    uf = int(rng.choice(N_ACTIONS, p=yF[t, sid]))
                else:
                    uf = None
                chosen[(t, sid)] = uf
                pairs.append(StrategyPair(t, sid, announced[t, sid].copy(), uf))
                eff = Action.KEEP if uf is None else uf
                for a in np.flatnonzero(announced[t, sid] > 0):
                    nxt.add(int(succ[sid, a, eff]))
            layer = sorted(nxt)
        path = []
        sid = sid0
        for t in range(scn.T):
            uL = int(rng.choice(N_ACTIONS, p=announced[t, sid]))
            uf = chosen[(t, sid)]
            path.append((t, sid, uL, uf))
            sid = int(succ[sid, uL, Action.KEEP if uf is None else uf])
        samples.append(Sample(root=x0, pairs=pairs, path=path))
    return Dataset(driver_type=type_id, samples=samples)


def split_dataset(d: Dataset, n_train, n_test, seed):
    """Disjoint seeded split into train/test trajectory sets."""
    if n_train + n_test > len(d.samples):
        raise ValueError(
            f"cannot split {len(d.samples)} samples into {n_train}+{n_test}")
    order = np.random.default_rng(seed).permutation(len(d.samples))
    train = [d.samples[i] for i in order[:n_train]]
    test = [d.samples[i] for i in order[n_train:n_train + n_test]]
    return (Dataset(d.driver_type, train), Dataset(d.driver_type, test))


def save_dataset(path, dataset: Dataset, scn: Scenario):
    """One JSON line per sample: type, root, visited pairs, rolled path."""
    with open(path, "w") as f:
        for s in dataset.samples:
            doc = {
                "type": dataset.driver_type,
                "root": list(s.root),
                "pairs": [{"t": p.t, "x": list(map(int, scn.decode(p.sid))),
                           "yL": [float(v) for v in p.yL],
                           "uF": p.uF}
                          for p in s.pairs],
            }
            if s.path is not None:
                doc["path"] = [{"t": t, "x": list(map(int, scn.decode(sid))),
                                "uL": uL, "uF": uF}
                               for t, sid, uL, uF in s.path]
            f.write(json.dumps(doc) + "\n")


def load_dataset(path, scn: Scenario):
    """Read a JSONL dataset and validate its recorded trees: simplex rows,
    quiet stages carry no action, and every next-level state is a recorded
    transition under the announced support."""
    succ = successor_table(scn)
    samples = []
    driver_type = 0
    with open(path) as f:
        for line in f:
            doc = json.loads(line)
            driver_type = doc["type"]
            pairs = []
            for rec in doc["pairs"]:
                yl = np.asarray(rec["yL"], dtype=float)
                if yl.shape != (N_ACTIONS,) or yl.min() < -1e-12 \
                        or abs(yl.sum() - 1.0) > 1e-9:
                    raise ValueError(f"invalid strategy row in {path}")
                uf = rec["uF"]
                if scn.sigma[rec["t"]] != (uf is not None):
                    raise ValueError("action record disagrees with schedule")
                pairs.append(StrategyPair(rec["t"], scn.encode(*rec["x"]),
                                          yl, uf))
            _check_closure(pairs, doc["root"], succ, scn)
            path_rec = None
            if "path" in doc:
                path_rec = [(p["t"], scn.encode(*p["x"]), p["uL"], p["uF"])
                            for p in doc["path"]]
            samples.append(Sample(root=tuple(doc["root"]), pairs=pairs,
                                  path=path_rec))
    return Dataset(driver_type=driver_type, samples=samples)


def _check_closure(pairs, root, succ, scn):
    by_t = {}
    for p in pairs:
        by_t.setdefault(p.t, {})[p.sid] = p
    if set(by_t.get(0, ())) != {scn.encode(*root)}:
        raise ValueError("level 0 must be exactly the root state")
    for t in sorted(by_t):
        if t + 1 not in by_t:
            continue
        reach = set()
        for sid, p in by_t[t].items():
            eff = Action.KEEP if p.uF is None else p.uF
            for a in np.flatnonzero(p.yL > 0):
                reach.add(int(succ[sid, a, eff]))
        if set(by_t[t + 1]) != reach:
            raise ValueError(f"level {t + 1} states are not the recorded "
                             f"successors of level {t}")

"""Driver-utility estimation from observed actions.

The driver's reply at a decision state is a logit choice over composite
scores, so observed (announced strategy, chosen action) pairs give a
cross-entropy objective in the 6x6 composite matrix. This module has the
analytic first and second derivatives of that objective, the two-level
(adapt-then-evaluate) task update, the successive backward training loop
that turns per-stage composite estimates back into one stage-utility table,
and the few-shot per-driver adaptation pass.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .game import (
    composite_utility,
    dp_stage_no_driver,
    leader_stage_opt,
    qr_response,
    solve_fse,
)
from .gridworld import (
    Action,
    N_ACTIONS,
    Scenario,
    successor_table,
    terminal_reward,
)


@dataclass
class StrategyPair:
    """One observed decision: announced mixed strategy vs chosen action."""
    t: int
    sid: int
    yL: np.ndarray
    uF: int


@dataclass
class Sample:
    """One recorded decision trajectory: a tree of visited (t, state) cells.

    root: t=0 state tuple (p, y, v); pairs: one StrategyPair per visited
    cell; path: optional single rollout [(t, sid, uL, uF), ...] for replay.
    """
    root: tuple
    pairs: list
    path: list = None

    def cell_index(self):
        return {(p.t, p.sid): p for p in self.pairs}


@dataclass
class Dataset:
    driver_type: int
    samples: list


@dataclass
class LearnConfig:
    alpha: float = 0.01
    beta: float = 0.04
    n_train: int = 10
    n_test: int = 5
    max_outer_iters: int = 200
    adapt_iters: int = 20
    adapt_sample_size: int = 10
    seed: int = 0
    first_order: bool = False
    tasks_per_batch: int = None


@dataclass
class MetaState:
    """Mutable loop state: the utility estimate plus its derived values."""
    g_est: np.ndarray
    VL: np.ndarray = None
    VF: np.ndarray = None
    update_counts: np.ndarray = None


def _stack(pairs):
    """Stack pairs in a canonical row order (lexicographic by announced
    strategy, then action) so every reduction over them is bitwise
    permutation invariant."""
    YL = np.array([p.yL for p in pairs], dtype=float)
    UF = np.array([p.uF for p in pairs], dtype=np.int64)
    order = np.lexsort((UF,) + tuple(YL[:, a] for a in range(YL.shape[1]))[::-1])
    return YL[order], UF[order]


def _ce_stacked(gtilde, YL, UF, lam):
    """Loss and gradient from pre-stacked pairs; also returns the choice
    probabilities for the Hessian."""
    S = lam * (YL @ gtilde)
    S -= S.max(axis=1, keepdims=True)
    logZ = np.log(np.exp(S).sum(axis=1))
    n = len(UF)
    loss = float(np.mean(logZ - S[np.arange(n), UF]))
    q = np.exp(S - logZ[:, None])
    resid = q.copy()
    resid[np.arange(n), UF] -= 1.0
    grad = (lam / n) * (YL.T @ resid)
    return loss, grad, q


def ce_loss_and_grad(gtilde, pairs, lam):
    """Cross-entropy between observed one-hot actions and the logit replies
    implied by gtilde, averaged over pairs, with its exact gradient.

    Empty pairs are a defined no-data case: (0, zero matrix).
    """
    gtilde = np.asarray(gtilde, dtype=float)
    if not pairs:
        return 0.0, np.zeros_like(gtilde)
    YL, UF = _stack(pairs)
    loss, grad, _ = _ce_stacked(gtilde, YL, UF, lam)
    return loss, grad


def ce_hessian(gtilde, pairs, lam):
    """Exact 36x36 Hessian of the cross-entropy objective.

    Row/column index is the C-order flattening (leader_action*6 + follower
    action). Empty pairs give the zero matrix.
    """
    gtilde = np.asarray(gtilde, dtype=float)
    m = gtilde.size
    if not pairs:
        return np.zeros((m, m))
    YL, UF = _stack(pairs)
    _, _, q = _ce_stacked(gtilde, YL, UF, lam)
    cov = np.einsum('ib,bd->ibd', q, np.eye(gtilde.shape[1])) \
        - np.einsum('ib,id->ibd', q, q)
    H4 = np.einsum('ia,ic,ibd->abcd', YL, YL, cov)
    return (lam * lam / len(UF)) * H4.reshape(m, m)


def inner_adapt(gtilde, train_pairs, alpha, lam):
    """One gradient step on the task's own data (the fast-parameter step)."""
    _, grad = ce_loss_and_grad(gtilde, train_pairs, lam)
    return np.asarray(gtilde, dtype=float) - alpha * grad


def meta_task_update(gtilde, batch, alpha, beta, lam, first_order=False):
    """Across-task update of the shared composite estimate.

    batch: list of (type_id, train_pairs, test_pairs). Each task adapts
    inward on train, evaluates its gradient on test (falling back to train
    when test is empty), and the second-order factor (I - alpha*H_train)
    backpropagates through the inner step. first_order drops that factor.
    """
    gtilde = np.asarray(gtilde, dtype=float)
    m = gtilde.size
    total = np.zeros(m)
    for _, train, test in batch:
        g_in = inner_adapt(gtilde, train, alpha, lam)
        target = test if test else train
        _, g_out = ce_loss_and_grad(g_in, target, lam)
        step = g_out.ravel()
        if not first_order:
            H = ce_hessian(gtilde, train, lam)
            step = step - alpha * (H @ step)
        total += step
    return gtilde - (beta / len(batch)) * total.reshape(gtilde.shape)


def recover_g_from_composite(gtilde, VF_next, sid, scn: Scenario):
    """Invert the composite construction: subtract the discounted successor
    values to get back the stage-utility block at one state."""
    return np.asarray(gtilde, dtype=float) \
        - scn.gamma * VF_next[successor_table(scn)[sid]]


def merge_block(g_tab, counts, sid, block, n_pairs):
    """Pair-count-weighted running average of per-state utility blocks
    produced at different stages of one backward pass."""
    if counts[sid] == 0:
        g_tab[sid] = block
    else:
        w = counts[sid] + n_pairs
        g_tab[sid] = (g_tab[sid] * counts[sid] + block * n_pairs) / w
    counts[sid] += n_pairs


def _decision_layers(samples, T):
    """Per-t state sets visited by the given samples."""
    X = [set() for _ in range(T)]
    for s in samples:
        for p in s.pairs:
            X[p.t].add(p.sid)
    return X


def _support_layers(scn, roots):
    """Value-support closure: everything forward-reachable from the roots,
    which covers every composite lookup the backward pass can make."""
    succ = successor_table(scn)
    cur = np.unique(np.fromiter(roots, dtype=np.int64))
    layers = [cur]
    for _ in range(scn.T):
        cur = np.unique(succ[cur])
        layers.append(cur)
    return layers


def _pairs_at(samples, t, sid):
    out = []
    for s in samples:
        for p in s.pairs:
            if p.t == t and p.sid == sid:
                out.append(p)
    return out


def _solve_restricted_stage(g_tab, VL, VF, t, ids, scn):
    """Recompute both players' stage policies/values at the given states
    from the current utility estimate (both sides use the same model)."""
    A = composite_utility(g_tab, VL[t + 1], scn, ids)
    G = composite_utility(g_tab, VF[t + 1], scn, ids)
    if scn.sigma[t]:
        yl, vl, _ = leader_stage_opt(A, G, scn.rationality)
        yf, vf = qr_response(G, yl, scn.rationality)
    else:
        uL, vl, vf = dp_stage_no_driver(A, G)
        yl = np.zeros((len(ids), N_ACTIONS))
        yl[np.arange(len(ids)), uL] = 1.0
        yf = np.zeros((len(ids), N_ACTIONS))
        yf[:, Action.KEEP] = 1.0
    VL[t, ids] = vl
    VF[t, ids] = vf
    return yl, yf


def collect_cells(datasets, scn: Scenario, sid=None):
    """Pool pairs per (type, t, state) over decision stages, optionally for
    one state only. Returns {(theta, t, sid): (YL stack, UF indices)}."""
    cells = {}
    for theta, d in datasets.items():
        grouped = {}
        for s in d.samples:
            for p in s.pairs:
                if not scn.sigma[p.t]:
                    continue
                if sid is not None and p.sid != sid:
                    continue
                grouped.setdefault((p.t, p.sid), []).append(p)
        for (t, x), pairs in grouped.items():
            cells[(theta, t, x)] = _stack(pairs)
    return cells


def _loss_over_cells(g_est, cells, scn, VF):
    if not cells:
        return 0.0
    succ = successor_table(scn)
    losses = []
    for (theta, t, sid), (YL, UF) in sorted(cells.items()):
        gt = g_est[sid] + scn.gamma * VF[t + 1][succ[sid]]
        loss, _, _ = _ce_stacked(gt, YL, UF, scn.rationality)
        losses.append(loss)
    return float(np.mean(losses))


def normalized_loss(g_est, datasets, scn: Scenario, sid=None):
    """Mean per-cell cross-entropy of the estimate against all recorded
    decisions, using the value functions the estimate itself induces.

    sid restricts to one state (the per-state curves). No decision-stage
    data at all gives 0 by definition.
    """
    g_est = np.asarray(g_est, dtype=float)
    cells = collect_cells(datasets, scn, sid)
    if not cells:
        return 0.0
    sol = solve_fse(scn, g_est)
    return _loss_over_cells(g_est, cells, scn, sol.VF)


def run_meta_training(datasets, mu, scn: Scenario, cfg: LearnConfig,
                      track_states=()):
    """Successive backward estimation of a population-level utility table.

    Per outer iteration: sample a task batch from the type distribution,
    draw train/test trajectories per task, then walk the horizon backward.
    No-decision stages only back up values; decision stages run the
    across-task update on each visited state's composite, invert it back to
    stage utilities (pair-count-weighted when several stages touch the same
    state), and re-solve the stage under the updated table. Loss history row
    k is the normalized loss after k iterations (row 0: the zero init).

    Returns (g_meta, history dict with 'overall' plus one key per tracked
    state id).
    """
    rng = np.random.default_rng(cfg.seed)
    n, T = scn.n_states, scn.T
    types = sorted(th for th, w in mu.items() if w > 0)
    weights = np.array([mu[th] for th in types], dtype=float)
    weights /= weights.sum()
    for th in types:
        if th not in datasets or not datasets[th].samples:
            raise ValueError(f"no data for sampled type {th}")

    state = MetaState(g_est=np.zeros((n, N_ACTIONS, N_ACTIONS)),
                      update_counts=np.zeros(n, dtype=np.int64))
    report_cells = collect_cells(datasets, scn)
    track = {s: [] for s in track_states}
    overall = []

    def log_loss():
        sol = solve_fse(scn, state.g_est)
        overall.append(_loss_over_cells(state.g_est, report_cells, scn, sol.VF))
        for s in track_states:
            sub = {k: v for k, v in report_cells.items() if k[2] == s}
            track[s].append(_loss_over_cells(state.g_est, sub, scn, sol.VF))

    log_loss()
    n_tasks = cfg.tasks_per_batch or len(types)
    q_T = terminal_reward(scn)
    succ = successor_table(scn)
    need = cfg.n_train + cfg.n_test
    for _ in range(cfg.max_outer_iters):
        batch_types = rng.choice(types, size=n_tasks, p=weights, replace=True)
        tasks = []
        for th in batch_types:
            samples = datasets[th].samples
            if len(samples) < need:
                raise ValueError(
                    f"type {th} has {len(samples)} trajectories, need {need}")
            idx = rng.choice(len(samples), size=need, replace=False)
            tasks.append((th, [samples[i] for i in idx[:cfg.n_train]],
                          [samples[i] for i in idx[cfg.n_train:]]))

        all_samples = [s for _, tr, te in tasks for s in tr + te]
        X = _decision_layers(all_samples, T)
        roots = {scn.encode(*s.root) for s in all_samples}
        layers = _support_layers(scn, roots)
        VL = np.full((T + 1, n), np.nan)
        VF = np.full((T + 1, n), np.nan)
        VL[T] = q_T
        VF[T] = q_T
        iter_counts = np.zeros(n, dtype=np.int64)
        for t in reversed(range(T)):
            if scn.sigma[t]:
                for sid in sorted(X[t]):
                    vnext = VF[t + 1][succ[sid]]
                    gt = state.g_est[sid] + scn.gamma * vnext
                    cell_batch = []
                    n_pairs = 0
                    for th, tr, te in tasks:
                        ptr = _pairs_at(tr, t, sid)
                        pte = _pairs_at(te, t, sid)
                        n_pairs += len(ptr) + len(pte)
                        cell_batch.append((th, ptr, pte))
                    if n_pairs == 0:
                        continue
                    gt2 = meta_task_update(gt, cell_batch, cfg.alpha, cfg.beta,
                                           scn.rationality, cfg.first_order)
                    merge_block(state.g_est, iter_counts, sid,
                                gt2 - scn.gamma * vnext, n_pairs)
                    state.update_counts[sid] += n_pairs
            _solve_restricted_stage(state.g_est, VL, VF, t, layers[t], scn)
        state.VL, state.VF = VL, VF
        log_loss()

    history = {"overall": np.array(overall)}
    for s in track_states:
        history[s] = np.array(track[s])
    return state.g_est, history


def adapt_driver(g_meta, dataset: Dataset, scn: Scenario, cfg: LearnConfig):
    """Specialize a population-level table to one driver from a handful of
    recorded trajectories: same backward structure as training, but each
    visited state takes a plain gradient step on its composite.
    """
    rng = np.random.default_rng(cfg.seed)
    n, T = scn.n_states, scn.T
    g = np.array(g_meta, dtype=float, copy=True)
    if not dataset.samples:
        raise ValueError("cannot adapt on an empty dataset")
    q_T = terminal_reward(scn)
    succ = successor_table(scn)
    for _ in range(cfg.adapt_iters):
        k = min(cfg.adapt_sample_size, len(dataset.samples))
        idx = rng.choice(len(dataset.samples), size=k, replace=False)
        chosen = [dataset.samples[i] for i in idx]
        X = _decision_layers(chosen, T)
        roots = {scn.encode(*s.root) for s in chosen}
        layers = _support_layers(scn, roots)
        VL = np.full((T + 1, n), np.nan)
        VF = np.full((T + 1, n), np.nan)
        VL[T] = q_T
        VF[T] = q_T
        iter_counts = np.zeros(n, dtype=np.int64)
        for t in reversed(range(T)):
            if scn.sigma[t]:
                for sid in sorted(X[t]):
                    pairs = _pairs_at(chosen, t, sid)
                    if not pairs:
                        continue
                    vnext = VF[t + 1][succ[sid]]
                    gt = g[sid] + scn.gamma * vnext
                    _, grad = ce_loss_and_grad(gt, pairs, scn.rationality)
                    merge_block(g, iter_counts, sid,
                                (gt - cfg.alpha * grad) - scn.gamma * vnext,
                                len(pairs))
            _solve_restricted_stage(g, VL, VF, t, layers[t], scn)
    return g


def save_utility_json(path, table, meta=None):
    """Learned-table format: {state_index: 6x6 nested lists, "meta": {...}}."""
    doc = {str(sid): [[float(v) for v in row] for row in table[sid]]
           for sid in range(table.shape[0])}
    doc["meta"] = meta or {}
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True)


def load_utility_json(path):
    with open(path) as f:
        doc = json.load(f)
    meta = doc.pop("meta", {})
    n = max(int(k) for k in doc) + 1
    table = np.zeros((n, N_ACTIONS, N_ACTIONS))
    for k, block in doc.items():
        table[int(k)] = np.asarray(block, dtype=float)
    return table, meta

"""Stage games between the assistant (leader) and the driver (follower).

At a decision step the assistant announces a mixed strategy yL, the driver
replies with a smoothed best response proportional to exp(lambda * expected
score), and the assistant picks yL to maximize its own expected continuation
value against that reply. At a no-decision step the driver holds the wheel
steady (her keep action) and the assistant takes the best pure action
against that fixed column. Backward induction over the horizon stitches
stage solutions into time-indexed policies and values.
"""
from dataclasses import dataclass

import numpy as np

from .gridworld import (
    Action,
    N_ACTIONS,
    Scenario,
    successor_table,
    terminal_reward,
)

PGA_STEP = 0.1
PGA_MAX_ITERS = 500
PGA_TOL = 1e-8


def project_to_simplex(y):
    """Euclidean projection of the trailing axis onto the probability simplex."""
    u = np.sort(y, axis=-1)[..., ::-1]
    css = np.cumsum(u, axis=-1) - 1.0
    idx = np.arange(1, y.shape[-1] + 1)
    rho = np.sum(u * idx > css, axis=-1, keepdims=True)
    theta = np.take_along_axis(css, rho - 1, axis=-1) / rho
    return np.maximum(y - theta, 0.0)


def qr_response(gtilde, yL, lam):
    """Smoothed driver reply to an announced strategy.

    gtilde: (..., 6, 6) composite score matrix, yL: (..., 6). Returns
    (yF, VF): the logit choice probabilities over follower actions and the
    matching log-sum-exp value (the entropy-smoothed optimum). Max
    subtraction keeps exp() in range for large lambda * score products.
    """
    s = np.einsum('...ij,...i->...j', gtilde, yL)
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(lam * (s - m))
    z = e.sum(axis=-1, keepdims=True)
    yF = e / z
    VF = (m + np.log(z) / lam).squeeze(-1)
    return yF, VF


def leader_value(A, gtildeF, yL, lam):
    """Assistant's expected stage value for announcing yL."""
    q, _ = qr_response(gtildeF, yL, lam)
    return np.einsum('...i,...ij,...j->...', yL, A, q)


def leader_stage_opt(A, gtildeF, lam, step=PGA_STEP, max_iters=PGA_MAX_ITERS,
                     tol=PGA_TOL):
    """Maximize the assistant's stage value over mixed announcements.

    Projected gradient ascent, batched over the leading dim of A/gtildeF
    (n, mL, mF), restarted from the uniform point and every vertex while
    tracking the best iterate ever seen. That makes the result provably no
    worse than any pure announcement. Returns (yL, J, converged).
    """
    n, mL = A.shape[0], A.shape[1]
    starts = np.vstack([np.full((1, mL), 1.0 / mL), np.eye(mL)])
    y_act = np.repeat(starts, n, axis=0)                  # ((mL+1)*n, mL)
    Ab = np.tile(A, (len(starts), 1, 1))
    Gb = np.tile(gtildeF, (len(starts), 1, 1))

    best_y = y_act.copy()
    best_j = np.full(len(y_act), -np.inf)

    def eval_and_grad(y, Asub, Gsub):
        s = np.einsum('bij,bi->bj', Gsub, y)
        m = s.max(axis=1, keepdims=True)
        e = np.exp(lam * (s - m))
        q = e / e.sum(axis=1, keepdims=True)
        Aq = np.einsum('bij,bj->bi', Asub, q)
        j = np.einsum('bi,bi->b', y, Aq)
        r = np.einsum('bij,bi->bj', Asub, y)
        w = q * (r - np.einsum('bj,bj->b', q, r)[:, None])
        grad = Aq + lam * np.einsum('bij,bj->bi', Gsub, w)
        return j, grad

    j0, _ = eval_and_grad(y_act, Ab, Gb)
    j_start = j0.reshape(len(starts), n)

    # fixed-step ascent limit-cycles near each row's optimum, so rows whose
    # best value improves by less than 1e-7 over a 40-step window are frozen
    # at their best iterate and drop out of the batch
    converged = False
    active = np.arange(len(y_act))
    A_act, G_act = Ab, Gb
    window = best_j.copy()
    for it in range(max_iters):
        j, grad = eval_and_grad(y_act, A_act, G_act)
        better = j > best_j[active]
        idx = active[better]
        best_j[idx] = j[better]
        best_y[idx] = y_act[better]
        if (it + 1) % 40 == 0:
            keep = best_j[active] - window[active] >= 1e-7
            window[active] = best_j[active]
            if not keep.all():
                active = active[keep]
                if active.size == 0:
                    converged = True
                    break
                y_act, grad = y_act[keep], grad[keep]
                A_act, G_act = A_act[keep], G_act[keep]
        y_next = project_to_simplex(y_act + step * grad)
        moved = np.abs(y_next - y_act).max()
        y_act = y_next
        if moved < tol:
            converged = True
            break
    if active.size:
        j, _ = eval_and_grad(y_act, A_act, G_act)
        better = j > best_j[active]
        idx = active[better]
        best_j[idx] = j[better]
        best_y[idx] = y_act[better]

    best_j = best_j.reshape(len(starts), n)
    best_y = best_y.reshape(len(starts), n, mL)
    pick = best_j.argmax(axis=0)
    cols = np.arange(n)
    yl, jv = best_y[pick, cols], best_j[pick, cols]
    # constant objective: the uniform point and all six vertices start at
    # the same value (up to float noise) and ascent finds nothing better.
    # The tie must break to uniform, not to whichever vertex drifted last;
    # the announcement stays neutral where the table has nothing to say.
    tol = 1e-12 * (1.0 + np.abs(jv))
    spread = j_start.max(axis=0) - j_start.min(axis=0)
    flat = (spread <= tol) & (jv - j_start.max(axis=0) <= tol)
    if flat.any():
        yl = yl.copy()
        yl[flat] = 1.0 / mL
        jv = jv.copy()
        jv[flat], _ = eval_and_grad(yl[flat], A[flat], gtildeF[flat])
    return yl, jv, converged


def dp_stage_no_driver(A, gtildeF):
    """No-decision stage: the driver holds the wheel steady, so the assistant
    takes the best pure action against her keep column (lowest index on ties).

    A, gtildeF: (n, 6, 6) composite matrices. Returns (uL, VL, VF).
    """
    keep_col = A[:, :, Action.KEEP]
    uL = keep_col.argmax(axis=1)
    cols = np.arange(A.shape[0])
    return uL, keep_col[cols, uL], gtildeF[cols, uL, Action.KEEP]


def composite_utility(g_tab, V_next, scn: Scenario, states=None):
    """Stage utilities plus discounted values at the successor states.

    g_tab: (n, 6, 6), V_next: (n,). Returns (len(states), 6, 6); NaNs in
    V_next at referenced successors will surface in the output (that means
    the caller broke the backward ordering).
    """
    succ = successor_table(scn)
    if states is not None:
        return g_tab[states] + scn.gamma * V_next[succ[states]]
    return g_tab + scn.gamma * V_next[succ]


@dataclass
class HorizonSolution:
    """Time-indexed policies and values from backward induction.

    leader/follower: (T, n, 6) mixed policies, NaN where a stage was not
    solved (restricted runs). VL/VF: (T+1, n) values, row T is terminal.
    """
    leader: np.ndarray
    follower: np.ndarray
    VL: np.ndarray
    VF: np.ndarray

    def _policy_dict(self, pol):
        out = {}
        for t in range(pol.shape[0]):
            row = {}
            for sid in range(pol.shape[1]):
                if not np.isnan(pol[t, sid, 0]):
                    row[str(sid)] = [float(p) for p in pol[t, sid]]
            out[str(t)] = row
        return out

    def leader_dict(self):
        return self._policy_dict(self.leader)

    def follower_dict(self):
        return self._policy_dict(self.follower)

    def value_dict(self, side="L"):
        V = self.VL if side == "L" else self.VF
        return {str(t): {str(s): float(v) for s, v in enumerate(V[t])
                         if not np.isnan(v)}
                for t in range(V.shape[0])}


def solve_fse(scn: Scenario, gL_tab, gF_tab=None, states_per_t=None):
    """Backward induction of the stagewise commit-then-respond equilibrium.

    gL_tab: (n, 6, 6) stage utilities the assistant optimizes; gF_tab: the
    driver model it assumes (defaults to gL_tab). states_per_t optionally
    restricts each stage to an id array; successors of a restricted stage
    must land inside the next stage's set (reachable sets guarantee this).
    """
    if gF_tab is None:
        gF_tab = gL_tab
    n, T = scn.n_states, scn.T
    q_T = terminal_reward(scn)
    VL = np.full((T + 1, n), np.nan)
    VF = np.full((T + 1, n), np.nan)
    VL[T] = q_T
    VF[T] = q_T
    yL = np.full((T, n, N_ACTIONS), np.nan)
    yF = np.full((T, n, N_ACTIONS), np.nan)
    for t in reversed(range(T)):
        ids = np.arange(n) if states_per_t is None else np.asarray(states_per_t[t])
        A = composite_utility(gL_tab, VL[t + 1], scn, ids)
        G = composite_utility(gF_tab, VF[t + 1], scn, ids)
        if scn.sigma[t]:
            yl, vl, _ = leader_stage_opt(A, G, scn.rationality)
            yf, vf = qr_response(G, yl, scn.rationality)
        else:
            uL, vl, vf = dp_stage_no_driver(A, G)
            yl = np.zeros((len(ids), N_ACTIONS))
            yl[np.arange(len(ids)), uL] = 1.0
            yf = np.zeros((len(ids), N_ACTIONS))
            yf[:, Action.KEEP] = 1.0
        yL[t, ids] = yl
        yF[t, ids] = yf
        VL[t, ids] = vl
        VF[t, ids] = vf
    return HorizonSolution(leader=yL, follower=yF, VL=VL, VF=VF)


def follower_response_trajectory(gF_true, announced, scn: Scenario, roots):
    """Driver-side DP against a given (not necessarily optimal) announced
    leader policy.

    announced: (T, n, 6) leader policy, NaN at uncovered states. roots:
    iterable of t=0 state ids. The value backup weights successors by the
    announced mixture; at decision steps the reply is the logit response, at
    no-decision steps it is forced keep. Raises if the announced policy does
    not cover a reachable state. Returns (yF, VF, layers): policies and
    values NaN-masked outside the reachable sets, plus the per-t id arrays.
    """
    succ = successor_table(scn)
    n, T = scn.n_states, scn.T
    layers = [np.unique(np.asarray(list(roots), dtype=np.int64))]
    for t in range(T):
        ids = layers[t]
        if np.isnan(announced[t, ids]).any():
            raise ValueError(f"announced policy misses reachable states at t={t}")
        nxt = []
        for sid in ids:
            sup = np.nonzero(announced[t, sid] > 0)[0]
            if scn.sigma[t]:
                nxt.append(succ[sid][sup].ravel())
            else:
                nxt.append(succ[sid][sup, Action.KEEP].ravel())
        layers.append(np.unique(np.concatenate(nxt)))

    q_T = terminal_reward(scn)
    VF = np.full((T + 1, n), np.nan)
    VF[T] = q_T
    yF = np.full((T, n, N_ACTIONS), np.nan)
    for t in reversed(range(T)):
        ids = layers[t]
        G = gF_true[ids] + scn.gamma * VF[t + 1][succ[ids]]
        yl = announced[t, ids]
        # rows outside the announced support reference next-values that were
        # never computed; they carry zero weight, so zero them before the
        # contraction (0 * nan would otherwise poison the scores)
        G = np.where(yl[:, :, None] > 0, G, 0.0)
        if scn.sigma[t]:
            yf, vf = qr_response(G, yl, scn.rationality)
        else:
            yf = np.zeros((len(ids), N_ACTIONS))
            yf[:, Action.KEEP] = 1.0
            vf = np.einsum('bi,bi->b', yl, G[:, :, Action.KEEP])
        yF[t, ids] = yf
        VF[t, ids] = vf
    return yF, VF, layers

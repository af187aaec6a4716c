"""Separation principle on finite POMDPs, verified by exhaustive search.

Everything here is exact: the optimal Q-function is computed by backward
induction over the complete (action, observation) history tree, beliefs by
discrete Bayes updates, and the claims under test — that Q* depends on the
history only through the belief, that the greedy belief policy achieves the
history-optimal return, and that exact reward prediction suffices to
reconstruct Q* — are checked to floating-point tolerance rather than
estimated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FinitePOMDP",
    "HistoryNode",
    "belief_update",
    "obs_probability",
    "brute_force_q",
    "verify_separation",
    "belief_policy",
    "policy_return",
    "optimal_return",
    "reward_sufficiency_check",
    "exact_belief_representation",
    "collapsing_representation",
    "mdp_value_iteration",
    "random_pomdp",
    "belief_collision_pomdp",
    "counterexample_pomdp",
    "pomdp_to_json",
    "pomdp_from_json",
    "write_separation_report",
]

_NODE_CAP = 10**6
_GROUP_DECIMALS = 10  # canonical belief rounding for deterministic grouping


@dataclass(frozen=True)
class FinitePOMDP:
    """Finite POMDP with tables trans[s, a, s'], obs[s, o], reward[s, a].

    ``b0`` is the initial state distribution and ``horizon`` the number of
    actions taken. Rewards are deterministic functions of (state, action);
    a stochastic reward enters through its conditional mean, which is all
    expected-return computations can see.
    """

    trans: np.ndarray  # (S, A, S)
    obs: np.ndarray  # (S, O)
    reward: np.ndarray  # (S, A)
    b0: np.ndarray  # (S,)
    horizon: int

    def __post_init__(self):
        trans = np.asarray(self.trans, dtype=float)
        obs = np.asarray(self.obs, dtype=float)
        reward = np.asarray(self.reward, dtype=float)
        b0 = np.asarray(self.b0, dtype=float).reshape(-1)
        S = b0.size
        if trans.ndim != 3 or trans.shape[0] != S or trans.shape[2] != S:
            raise ValueError("transition table must have shape (S, A, S)")
        A = trans.shape[1]
        if obs.shape[0] != S or obs.ndim != 2:
            raise ValueError("observation table must have shape (S, O)")
        if reward.shape != (S, A):
            raise ValueError("reward table must have shape (S, A)")
        if not np.all(np.isfinite(reward)):
            raise ValueError("rewards must be finite")
        for name, table, axis in (("transition", trans, 2), ("observation", obs, 1)):
            if np.any(table < -1e-12):
                raise ValueError(f"{name} table has negative entries")
            if np.max(np.abs(table.sum(axis=axis) - 1.0)) > 1e-12:
                raise ValueError(f"{name} table rows must sum to 1")
        if abs(b0.sum() - 1.0) > 1e-12 or np.any(b0 < -1e-12):
            raise ValueError("initial distribution must be a probability vector")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        object.__setattr__(self, "trans", trans)
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "b0", b0)

    @property
    def n_states(self) -> int:
        return self.b0.size

    @property
    def n_actions(self) -> int:
        return self.trans.shape[1]

    @property
    def n_obs(self) -> int:
        return self.obs.shape[1]


@dataclass(frozen=True)
class HistoryNode:
    """One node of the history tree: the interleaved (a, o) prefix."""

    history: tuple  # ((a_1, o_1), ..., (a_t, o_t))
    reach: float  # probability under uniform exploration
    belief: np.ndarray  # p(s_t | history)
    q_values: np.ndarray  # (A,) optimal action values

    @property
    def depth(self) -> int:
        return len(self.history)


# ---------------------------------------------------------------------------
# beliefs
# ---------------------------------------------------------------------------


def obs_probability(pomdp: FinitePOMDP, belief, a: int) -> np.ndarray:
    """p(o | belief, a) for every observation."""
    pushed = np.asarray(belief, dtype=float) @ pomdp.trans[:, a, :]
    return pushed @ pomdp.obs


def belief_update(pomdp: FinitePOMDP, belief, a: int, o: int) -> np.ndarray:
    """Bayes step: b'(s') ∝ Ω(o|s') Σ_s T(s'|s,a) b(s).

    Raises on observations with zero probability under (belief, a); such
    branches are pruned by the tree construction instead of updated.
    """
    belief = np.asarray(belief, dtype=float)
    pushed = belief @ pomdp.trans[:, a, :]
    weighted = pushed * pomdp.obs[:, o]
    total = weighted.sum()
    if total <= 0.0:
        raise ValueError(f"observation {o} has zero probability after action {a}")
    return weighted / total


# ---------------------------------------------------------------------------
# exhaustive optimal control
# ---------------------------------------------------------------------------


def brute_force_q(pomdp: FinitePOMDP) -> dict:
    """Q* for every reachable history by exact backward induction.

    Returns {history: HistoryNode}. Q*(h, a) = E_b[r(s, a)] +
    Σ_o p(o|h,a) max_a' Q*(h+(a,o), a'); leaves (depth horizon-1) keep only
    the immediate term. The full tree is enumerated — a size guard rejects
    instances above 10^6 nodes.
    """
    A, O, H = pomdp.n_actions, pomdp.n_obs, pomdp.horizon
    est = sum((A * O) ** t for t in range(H))
    if est > _NODE_CAP:
        raise ValueError(f"history tree would need {est} nodes (cap {_NODE_CAP})")

    levels = [{(): (pomdp.b0.copy(), 1.0)}]
    for t in range(H - 1):
        level = {}
        for history, (belief, reach) in levels[t].items():
            for a in range(A):
                p_obs = obs_probability(pomdp, belief, a)
                for o in range(O):
                    if p_obs[o] <= 0.0:
                        continue
                    level[history + ((a, o),)] = (
                        belief_update(pomdp, belief, a, o),
                        reach * p_obs[o] / A,
                    )
        levels.append(level)

    nodes = {}
    child_values = {}  # history -> max_a Q*(h, a), filled bottom-up
    for t in range(H - 1, -1, -1):
        for history, (belief, reach) in levels[t].items():
            q = pomdp.reward.T @ belief  # E_b r(s, a) per action
            if t < H - 1:
                for a in range(A):
                    p_obs = obs_probability(pomdp, belief, a)
                    cont = 0.0
                    for o in range(O):
                        if p_obs[o] <= 0.0:
                            continue
                        cont += p_obs[o] * child_values[history + ((a, o),)]
                    q[a] += cont
            nodes[history] = HistoryNode(history, reach, belief, q)
            child_values[history] = float(q.max())
    return nodes


def _belief_key(depth: int, belief) -> tuple:
    rounded = np.round(np.asarray(belief, dtype=float), _GROUP_DECIMALS)
    rounded += 0.0  # normalize -0.0
    return (depth, tuple(rounded.tolist()))


def verify_separation(pomdp: FinitePOMDP, tol: float = 1e-9, nodes=None) -> dict:
    """Group equal-belief histories and measure the Q* spread inside groups.

    Histories of the same depth whose beliefs agree after rounding to
    1e-10 share a group; ``max_q_spread`` is the largest (max - min) of
    any action's Q* within a group, and ``pass`` holds iff it stays below
    ``tol``. The separation claim is exactly this: equal beliefs must give
    equal action values.
    """
    nodes = brute_force_q(pomdp) if nodes is None else nodes
    groups = {}
    for node in nodes.values():
        groups.setdefault(_belief_key(node.depth, node.belief), []).append(node)
    max_spread = 0.0
    for members in groups.values():
        if len(members) < 2:
            continue
        stacked = np.stack([m.q_values for m in members])
        max_spread = max(max_spread, float((stacked.max(0) - stacked.min(0)).max()))
    return {
        "max_q_spread": max_spread,
        "groups": len(groups),
        "pass": max_spread < tol,
    }


def belief_policy(pomdp: FinitePOMDP, nodes=None) -> dict:
    """Greedy policy tabulated on reachable beliefs.

    Maps the canonical (depth, rounded-belief) key to the argmax action of
    the group's Q* (lowest index on ties).
    """
    nodes = brute_force_q(pomdp) if nodes is None else nodes
    policy = {}
    for node in nodes.values():
        key = _belief_key(node.depth, node.belief)
        if key not in policy:
            # ties broken toward the lowest action index by argmax
            policy[key] = int(np.argmax(node.q_values))
    return policy


def policy_return(pomdp: FinitePOMDP, policy: dict) -> float:
    """Exact expected return of a belief-keyed policy."""

    def value(history, belief, depth):
        a = policy[_belief_key(depth, belief)]
        total = float(pomdp.reward[:, a] @ belief)
        if depth < pomdp.horizon - 1:
            p_obs = obs_probability(pomdp, belief, a)
            for o in range(pomdp.n_obs):
                if p_obs[o] <= 0.0:
                    continue
                total += p_obs[o] * value(history + ((a, o),),
                                          belief_update(pomdp, belief, a, o),
                                          depth + 1)
        return total

    return value((), pomdp.b0.copy(), 0)


def optimal_return(pomdp: FinitePOMDP, nodes=None) -> float:
    """max_a Q*(∅, a): the history-tree optimum."""
    nodes = brute_force_q(pomdp) if nodes is None else nodes
    return float(nodes[()].q_values.max())


# ---------------------------------------------------------------------------
# reward sufficiency
# ---------------------------------------------------------------------------


def reward_sufficiency_check(pomdp: FinitePOMDP, representation, nodes=None) -> dict:
    """Rebuild the action values using only reward predictions.

    ``representation(history, actions)`` must return the expected reward
    earned by the last action of ``actions`` when that open-loop sequence
    is executed after ``history``. The reconstruction runs the same
    backward induction as ``brute_force_q`` but replaces every expected
    immediate reward with the representation's prediction; observation
    branching probabilities still come from the environment. If the
    representation's reward predictions are exact, the rebuilt values must
    equal Q* — that is the sufficiency claim.
    """
    nodes = brute_force_q(pomdp) if nodes is None else nodes
    A, O, H = pomdp.n_actions, pomdp.n_obs, pomdp.horizon
    by_depth = {}
    for node in nodes.values():
        by_depth.setdefault(node.depth, []).append(node)

    q_from_rep = {}
    best = {}
    for t in range(H - 1, -1, -1):
        for node in by_depth[t]:
            q = np.array([representation(node.history, (a,)) for a in range(A)],
                         dtype=float)
            if t < H - 1:
                for a in range(A):
                    p_obs = obs_probability(pomdp, node.belief, a)
                    for o in range(O):
                        if p_obs[o] <= 0.0:
                            continue
                        q[a] += p_obs[o] * best[node.history + ((a, o),)]
            q_from_rep[node.history] = q
            best[node.history] = float(q.max())

    max_dev = 0.0
    for history, q in q_from_rep.items():
        max_dev = max(max_dev, float(np.max(np.abs(q - nodes[history].q_values))))
    return {
        "q_from_rep": q_from_rep,
        "q_star": {h: n.q_values for h, n in nodes.items()},
        "max_dev": max_dev,
    }


def exact_belief_representation(pomdp: FinitePOMDP):
    """Reward predictor carrying the full belief — the sufficient statistic.

    Replays the history with Bayes updates, then propagates the belief
    open-loop through the planned actions (no intermediate observations)
    and returns the expected reward of the final action.
    """

    def predict(history, actions):
        belief = pomdp.b0.copy()
        for a, o in history:
            belief = belief_update(pomdp, belief, a, o)
        for a in actions[:-1]:
            belief = belief @ pomdp.trans[:, a, :]
        return float(pomdp.reward[:, actions[-1]] @ belief)

    return predict


def collapsing_representation(pomdp: FinitePOMDP):
    """Reward predictor that discards observations (keeps only actions).

    Its state after a history is the open-loop action-propagated prior, so
    belief-distinct histories with the same action sequence collapse to one
    prediction — insufficient whenever observations matter for reward.
    """

    def predict(history, actions):
        belief = pomdp.b0.copy()
        for a, _o in history:
            belief = belief @ pomdp.trans[:, a, :]
        for a in actions[:-1]:
            belief = belief @ pomdp.trans[:, a, :]
        return float(pomdp.reward[:, actions[-1]] @ belief)

    return predict


# ---------------------------------------------------------------------------
# oracles and instances
# ---------------------------------------------------------------------------


def mdp_value_iteration(pomdp: FinitePOMDP) -> list:
    """Finite-horizon optimal state-action values of the underlying MDP.

    Returns [Q_0, ..., Q_{H-1}] with Q_t of shape (S, A). This ignores
    partial observability, so it matches ``brute_force_q`` exactly when
    observations are the identity.
    """
    S, A, H = pomdp.n_states, pomdp.n_actions, pomdp.horizon
    q_next_best = np.zeros(S)
    out = []
    for _ in range(H):
        q = pomdp.reward + np.einsum("sat,t->sa", pomdp.trans, q_next_best)
        out.append(q)
        q_next_best = q.max(axis=1)
    out.reverse()
    return out


def random_pomdp(rng, n_states=3, n_actions=2, n_obs=2, horizon=4) -> FinitePOMDP:
    """Dirichlet-random instance with rewards in [-1, 1]."""
    trans = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    obs = rng.dirichlet(np.ones(n_obs), size=n_states)
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    b0 = rng.dirichlet(np.ones(n_states))
    return FinitePOMDP(trans, obs, reward, b0, horizon)


def belief_collision_pomdp() -> FinitePOMDP:
    """Instance where distinct histories provably share beliefs.

    Transitions fully mix the state regardless of action, so the belief
    after any step depends only on the last observation — histories that
    differ in actions or earlier observations collide. Rewards still vary
    with (state, action), so the Q values are nontrivial.
    """
    mix = np.full((2, 2), 0.5)
    trans = np.stack([mix, mix], axis=1)  # (S, A, S)
    obs = np.array([[0.8, 0.2], [0.3, 0.7]])
    reward = np.array([[1.0, -0.5], [-1.0, 0.75]])
    b0 = np.array([0.5, 0.5])
    return FinitePOMDP(trans, obs, reward, b0, horizon=3)


def counterexample_pomdp() -> FinitePOMDP:
    """Instance where throwing observations away is provably insufficient.

    Observations nearly identify the state and rewards depend on it, so
    the observation-blind representation mispredicts rewards and its
    reconstructed action values deviate from Q*.
    """
    stay = np.eye(2)
    flip = np.array([[0.1, 0.9], [0.9, 0.1]])
    trans = np.stack([stay, flip], axis=1)
    obs = np.array([[0.95, 0.05], [0.05, 0.95]])
    reward = np.array([[1.0, 0.0], [-1.0, 0.25]])
    b0 = np.array([0.5, 0.5])
    return FinitePOMDP(trans, obs, reward, b0, horizon=3)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

_POMDP_KEYS = {"S", "A", "O", "T", "Omega", "r", "b0", "H"}


def pomdp_to_json(pomdp: FinitePOMDP, path=None) -> str:
    """Serialize with keys S, A, O, T, Omega, r, b0, H (row-major tables)."""
    payload = {
        "S": pomdp.n_states,
        "A": pomdp.n_actions,
        "O": pomdp.n_obs,
        "T": pomdp.trans.tolist(),
        "Omega": pomdp.obs.tolist(),
        "r": pomdp.reward.tolist(),
        "b0": pomdp.b0.tolist(),
        "H": pomdp.horizon,
    }
    text = json.dumps(payload, indent=2)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
            fh.write("\n")
    return text


def pomdp_from_json(source) -> FinitePOMDP:
    """Load an instance written by :func:`pomdp_to_json` (path or string)."""
    if isinstance(source, str) and source.lstrip().startswith("{"):
        payload = json.loads(source)
    else:
        with open(source) as fh:
            payload = json.load(fh)
    missing = _POMDP_KEYS - set(payload)
    if missing:
        raise ValueError(f"POMDP file missing keys: {sorted(missing)}")
    unknown = set(payload) - _POMDP_KEYS
    if unknown:
        raise ValueError(f"unknown POMDP key {sorted(unknown)[0]!r}")
    pomdp = FinitePOMDP(payload["T"], payload["Omega"], payload["r"],
                        payload["b0"], int(payload["H"]))
    declared = (int(payload["S"]), int(payload["A"]), int(payload["O"]))
    actual = (pomdp.n_states, pomdp.n_actions, pomdp.n_obs)
    if declared != actual:
        raise ValueError(f"declared sizes {declared} do not match tables {actual}")
    return pomdp


def write_separation_report(result: dict, path) -> None:
    """Verification report JSON: max_q_spread, group_count, pass."""
    payload = {
        "max_q_spread": result["max_q_spread"],
        "group_count": result["groups"],
        "pass": bool(result["pass"]),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
